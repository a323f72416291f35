#pragma once

#include <iosfwd>
#include <string>

#include "cacvit/data.hpp"
#include "cacvit/model.hpp"
#include "cacvit/train.hpp"

namespace cacvit {

// Merged run configuration: defaults, overridden by a key=value config file,
// overridden by flags. Unknown keys are errors.
struct RunConfig {
    ModelConfig model;
    OptimConfig optim;
    SceneSpec scene;
    std::size_t train_images = 512;
    std::size_t val_images = 128;
    std::size_t test_images = 64;
    std::string data_dir = "dataset";
    int threshold = 6;
    std::uint64_t seed = 1;

    // Applies one key=value pair; throws ConfigError for unknown keys or
    // malformed values.
    void apply(const std::string& key, const std::string& value);

    // Propagates the shared seed and canvas geometry into sub-configs and
    // validates everything.
    void finalize();

    void echo(std::ostream& os) const;
};

RunConfig load_run_config(const std::string& path); // empty path = defaults
void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv);

} // namespace cacvit
