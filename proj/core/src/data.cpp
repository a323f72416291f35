#include "cacvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cacvit/errors.hpp"
#include "cacvit/rng.hpp"

namespace fs = std::filesystem;

namespace cacvit {

void SceneSpec::validate() const {
    if (width < 8 || height < 8) throw ConfigError("scene canvas too small");
    if (count_min < 0 || count_max < count_min) throw ConfigError("bad target count range");
    if (radius_min <= 0.0 || radius_max < radius_min) throw ConfigError("bad radius range");
    if (aspect_min <= 0.0 || aspect_max < aspect_min) throw ConfigError("bad aspect range");
    if (distractor_min < 0 || distractor_max < distractor_min)
        throw ConfigError("bad distractor count range");
    if (noise < 0.0) throw ConfigError("noise must be nonnegative");
    if (sigma <= 0.0) throw ConfigError("sigma must be positive");
    if (k_exemplars < 1) throw ConfigError("k_exemplars must be >= 1");
}

namespace {

struct Blob {
    double cx, cy, rx, ry, gray;
};

// Rejection placement: no two centers closer than the sum of their
// placement radii (max semi-axis).
bool place(Rng& rng, const SceneSpec& spec, std::vector<Blob>& placed, double gray, int n) {
    for (int k = 0; k < n; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const double r = rng.uniform(spec.radius_min, spec.radius_max);
            const double a = rng.uniform(spec.aspect_min, spec.aspect_max);
            const double rx = r * std::sqrt(a);
            const double ry = r / std::sqrt(a);
            const double margin_x = rx + 1.0, margin_y = ry + 1.0;
            if (2.0 * margin_x >= spec.width || 2.0 * margin_y >= spec.height) continue;
            const double cx = rng.uniform(margin_x, spec.width - margin_x);
            const double cy = rng.uniform(margin_y, spec.height - margin_y);
            const double rad = std::max(rx, ry);
            ok = true;
            for (const Blob& b : placed) {
                const double min_d = rad + std::max(b.rx, b.ry);
                const double dx = cx - b.cx, dy = cy - b.cy;
                if (dx * dx + dy * dy < min_d * min_d) {
                    ok = false;
                    break;
                }
            }
            if (ok) placed.push_back({cx, cy, rx, ry, gray});
        }
        if (!ok) return false;
    }
    return true;
}

void draw_ellipse(Image& img, const Blob& b) {
    const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.rx - 2.0)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(b.cx + b.rx + 2.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.ry - 2.0)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(b.cy + b.ry + 2.0)));
    const double edge = std::min(b.rx, b.ry);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double ex = (x - b.cx) / b.rx, ey = (y - b.cy) / b.ry;
            const double e = std::sqrt(ex * ex + ey * ey);
            // ~1px soft edge for anti-aliasing
            const double alpha = std::clamp((1.0 - e) * edge + 0.5, 0.0, 1.0);
            double& v = img.at(x, y, 0);
            v = v + alpha * (b.gray - v);
        }
}

} // namespace

Scene generate_scene(const SceneSpec& spec, std::size_t index) {
    spec.validate();
    // Per-scene stream decorrelated from neighbors by a splitmix-style mix.
    std::uint64_t s = spec.seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    s ^= s >> 30;
    s *= 0xBF58476D1CE4E5B9ULL;
    s ^= s >> 27;
    Rng rng(s);

    const int n_targets = rng.uniform_int(spec.count_min, spec.count_max);
    const int n_distractors = rng.uniform_int(spec.distractor_min, spec.distractor_max);

    std::vector<Blob> blobs;
    if (!place(rng, spec, blobs, spec.target_gray, n_targets) ||
        !place(rng, spec, blobs, spec.distractor_gray, n_distractors))
        throw ConfigError("scene placement failed after 1000 attempts; lower the object density");

    Scene scene;
    scene.image = Image(spec.width, spec.height, 1);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            scene.image.at(x, y, 0) = rng.uniform(0.0, spec.noise);
    for (const Blob& b : blobs) draw_ellipse(scene.image, b);
    for (double& v : scene.image.data) v = std::clamp(v, 0.0, 1.0);

    scene.record.count = n_targets;
    for (int i = 0; i < n_targets; ++i) {
        const Blob& b = blobs[static_cast<std::size_t>(i)];
        scene.record.centers.emplace_back(b.cx, b.cy);
        Box box;
        box.x = std::max(0.0, std::floor(b.cx - b.rx));
        box.y = std::max(0.0, std::floor(b.cy - b.ry));
        box.w = std::min(static_cast<double>(spec.width) - box.x, std::ceil(2.0 * b.rx));
        box.h = std::min(static_cast<double>(spec.height) - box.y, std::ceil(2.0 * b.ry));
        scene.record.boxes.push_back(box);
    }
    scene.density = render_density(spec.width, spec.height, scene.record.centers, spec.sigma);

    if (n_targets > 0) {
        // K distinct picks while enough targets exist, repeats otherwise.
        std::vector<std::size_t> pool(static_cast<std::size_t>(n_targets));
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        rng.shuffle(pool);
        for (int k = 0; k < spec.k_exemplars; ++k)
            scene.record.exemplar_indices.push_back(pool[static_cast<std::size_t>(k) % pool.size()]);
    }
    return scene;
}

Manifest build_split(const SceneSpec& spec, std::size_t n_images, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Manifest manifest;
    manifest.root = out_dir;
    for (std::size_t i = 0; i < n_images; ++i) {
        Scene scene = generate_scene(spec, i);
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu", i);
        scene.record.image_path = std::string("img_") + name + ".cvdm";
        scene.record.density_path = std::string("den_") + name + ".cvdm";
        write_image_cvdm((fs::path(out_dir) / scene.record.image_path).string(), scene.image);
        write_density((fs::path(out_dir) / scene.record.density_path).string(), scene.density);
        write_pgm((fs::path(out_dir) / (std::string("img_") + name + ".pgm")).string(),
                  scene.image.width, scene.image.height, scene.image.data);
        manifest.records.push_back(std::move(scene.record));
    }
    write_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);
    return manifest;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const SceneRecord& r : manifest.records) {
        os << r.image_path << '\t' << r.density_path << '\t' << r.count << '\t';
        for (std::size_t i = 0; i < r.boxes.size(); ++i) {
            if (i) os << ';';
            os << r.boxes[i].x << ',' << r.boxes[i].y << ',' << r.boxes[i].w << ','
               << r.boxes[i].h;
        }
        os << '\t';
        for (std::size_t i = 0; i < r.exemplar_indices.size(); ++i) {
            if (i) os << ',';
            os << r.exemplar_indices[i];
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path);
    Manifest manifest;
    manifest.root = fs::path(path).parent_path().string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 5)
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected 5 fields");
        SceneRecord r;
        r.image_path = fields[0];
        r.density_path = fields[1];
        r.count = std::stoi(fields[2]);
        if (!fields[3].empty()) {
            std::istringstream bs(fields[3]);
            std::string tok;
            while (std::getline(bs, tok, ';')) {
                Box b;
                if (std::sscanf(tok.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h) != 4)
                    throw FormatError("manifest line " + std::to_string(lineno) + ": bad box '" +
                                      tok + "'");
                r.boxes.push_back(b);
                r.centers.emplace_back(b.x + b.w / 2.0, b.y + b.h / 2.0);
            }
        }
        if (!fields[4].empty()) {
            std::istringstream es(fields[4]);
            std::string tok;
            while (std::getline(es, tok, ','))
                r.exemplar_indices.push_back(static_cast<std::size_t>(std::stoul(tok)));
        }
        for (const std::size_t idx : r.exemplar_indices)
            if (idx >= r.boxes.size())
                throw FormatError("manifest line " + std::to_string(lineno) +
                                  ": exemplar index out of range");
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

std::pair<std::vector<SceneRecord>, std::vector<SceneRecord>>
stratify(const std::vector<SceneRecord>& records, int threshold) {
    std::pair<std::vector<SceneRecord>, std::vector<SceneRecord>> out;
    for (const SceneRecord& r : records)
        (r.count <= threshold ? out.first : out.second).push_back(r);
    return out;
}

} // namespace cacvit
