#pragma once

#include "wflow/functionals.hpp"
#include "wflow/schemes.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wflow {

/// Where the particles of a target measure come from.
struct TargetSpec {
    enum class Kind { points, image, dirac_sum, circle, square_boundary, gaussian };
    Kind kind = Kind::points;
    std::filesystem::path path;
    /// Sample count; defaults to the experiment's particle count.
    std::size_t n = 0;
    std::vector<std::vector<double>> centers;
    std::vector<double> center;
    double radius = 1.0;
    double stddev = 1.0;
};

struct FunctionalSpec {
    enum class Kind { interaction, mmd, branching, barycenter, zero };
    Kind kind = Kind::interaction;
    double r = 1.0;
    Norm norm = Norm::l2;
    std::optional<TargetSpec> target;
    struct Component {
        double weight;
        TargetSpec target;
    };
    std::vector<Component> components;
};

struct ExperimentConfig {
    Scheme scheme = Scheme::forward;
    FunctionalSpec functional;
    std::size_t d = 2;
    std::size_t n = 1000;
    Initializer initializer = Dirac{{0.0, 0.0}};
    std::vector<StepSchedule::Entry> schedule{{0.0, 0.05}};
    double horizon = 1.0;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    bool deterministic = true;
    std::vector<std::string> metrics;
    bool svg = false;
};

/// Metric names understood by run_experiment.
const std::vector<std::string>& known_metrics();

/// JSON config; unknown keys are rejected and all problems are reported together
/// as one ValidationError. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Semantic checks (dimensions, file references, scheme preconditions). Throws ValidationError.
void validate_config(const ExperimentConfig& cfg);

}  // namespace wflow
