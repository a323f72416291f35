#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cacvit/image.hpp"
#include "cacvit/model.hpp"

namespace cacvit {

// Parameters of one deterministic synthetic counting split. Targets are
// anti-aliased ellipses with jittered radius and aspect ratio; distractors
// share the geometry but differ in gray level.
struct SceneSpec {
    int width = 64;
    int height = 64;
    int count_min = 1;
    int count_max = 12;
    double radius_min = 2.0;
    double radius_max = 5.0;
    double aspect_min = 0.5;
    double aspect_max = 2.0;
    int distractor_min = 0;
    int distractor_max = 4;
    double noise = 0.05;
    double target_gray = 0.9;
    double distractor_gray = 0.45;
    double sigma = 1.0;
    int k_exemplars = 3;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SceneRecord {
    std::string image_path;
    std::string density_path;
    int count = 0;
    std::vector<Box> boxes; // target boxes only
    std::vector<std::pair<double, double>> centers;
    std::vector<std::size_t> exemplar_indices;
};

struct Scene {
    Image image;
    DensityMap density;
    SceneRecord record;
};

// Deterministic per (spec.seed, index).
Scene generate_scene(const SceneSpec& spec, std::size_t index);

struct Manifest {
    std::string root;
    std::vector<SceneRecord> records;
};

// Writes images (CVDM + PGM), densities, and the manifest into out_dir.
Manifest build_split(const SceneSpec& spec, std::size_t n_images, const std::string& out_dir);

// Line format: image\tdensity\tcount\tx,y,w,h;...\ti,i,i
void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

// Partition by ground-truth count: low has count <= threshold.
std::pair<std::vector<SceneRecord>, std::vector<SceneRecord>>
stratify(const std::vector<SceneRecord>& records, int threshold);

} // namespace cacvit
