#pragma once

#include "wflow/config.hpp"
#include "wflow/schemes.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace wflow {

/// Samples a target measure; `default_n` is used when the target leaves n open.
ParticleCloud sample_target(const TargetSpec& spec, std::size_t d, std::size_t default_n, RandomSource& rng);

/// Functional of a config with its targets sampled from `rng`.
Functional build_functional(const ExperimentConfig& cfg, RandomSource& rng);

/// √D² for the r = 1 Euclidean kernel, the distance used by every metric.
double mmd_distance(const ParticleCloud& a, const ParticleCloud& b);

struct MetricRow {
    double t;
    double mmd_to_reference;
    std::optional<double> w2_radial_to_reference;
};

/// Per snapshot: γ(t) of the interaction-energy flow from δ₀, sampled with `seed` and the
/// snapshot's size, compared by mmd_distance and w2_radial.
std::vector<MetricRow> compare_to_analytic(const std::vector<Snapshot>& snapshots, std::size_t d, double r,
                                           std::uint64_t seed);
void write_metric_rows(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

/// `t,x0,...` rows of one snapshot.
void write_snapshot_csv(const std::filesystem::path& path, const Snapshot& s);
Snapshot read_snapshot_csv(const std::filesystem::path& path);
/// All step_{k}.csv files of a directory in order of k.
std::vector<Snapshot> read_trace_dir(const std::filesystem::path& dir);

struct GradcheckReport {
    /// ‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖) for each loss.
    double backward_interaction;
    double backward_mmd;
    double forward_spread;
    double forward_dirac;

    double worst() const;
};

/// Tape gradients of both training losses against central differences on small random networks.
GradcheckReport run_gradcheck(std::uint64_t seed);

struct ExperimentResult {
    FlowTrace trace;
    /// metrics.csv columns after t, in order.
    std::vector<std::string> metric_names;
    std::vector<std::vector<double>> metric_values;
};

/// Runs the flow and writes step_{k}.csv, metrics.csv, diagnostics.csv and optional step_{k}.svg
/// into cfg.output_dir. Validation happens before any computation.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const StepCallback& on_step = {});

}  // namespace wflow
