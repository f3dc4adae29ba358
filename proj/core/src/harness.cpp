#include "wflow/harness.hpp"

#include "wflow/analytic.hpp"
#include "wflow/error.hpp"
#include "wflow/image.hpp"
#include "wflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace wflow {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kFlowStream = 3;
constexpr std::uint64_t kAnalyticStream = 4;
constexpr std::uint64_t kMixtureStream = 5;

std::string row_prefix(double t) { return io::format_double(t); }

}  // namespace

ParticleCloud sample_target(const TargetSpec& spec, std::size_t d, std::size_t default_n, RandomSource& rng) {
    const std::size_t n = spec.n ? spec.n : default_n;
    auto center_or_origin = [&](std::size_t dim) {
        return spec.center.empty() ? std::vector<double>(dim, 0.0) : spec.center;
    };
    switch (spec.kind) {
        case TargetSpec::Kind::points: {
            ParticleCloud c = read_points_csv(spec.path);
            if (c.dim() != d) throw ShapeError("target file dimension differs from d");
            return c;
        }
        case TargetSpec::Kind::image: return sample_image_target(spec.path, n, rng);
        case TargetSpec::Kind::dirac_sum: return make_initial(DiracSum{spec.centers}, spec.centers.size(), rng);
        case TargetSpec::Kind::circle: {
            const auto c = center_or_origin(2);
            Points x(static_cast<Eigen::Index>(n), 2);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const double a = 2.0 * std::numbers::pi * rng.uniform();
                x(i, 0) = c[0] + spec.radius * std::cos(a);
                x(i, 1) = c[1] + spec.radius * std::sin(a);
            }
            return ParticleCloud(std::move(x));
        }
        case TargetSpec::Kind::square_boundary: {
            const auto c = center_or_origin(2);
            Points x(static_cast<Eigen::Index>(n), 2);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const double u = 4.0 * rng.uniform();
                const auto side = static_cast<int>(u);
                const double s = spec.radius * (2.0 * (u - side) - 1.0);
                const double px = side == 0 ? s : side == 1 ? spec.radius : side == 2 ? -s : -spec.radius;
                const double py = side == 0 ? -spec.radius : side == 1 ? s : side == 2 ? spec.radius : -s;
                x(i, 0) = c[0] + px;
                x(i, 1) = c[1] + py;
            }
            return ParticleCloud(std::move(x));
        }
        case TargetSpec::Kind::gaussian: return make_initial(Gaussian{center_or_origin(d), spec.stddev}, n, rng);
    }
    throw Error("unknown target kind");
}

Functional build_functional(const ExperimentConfig& cfg, RandomSource& rng) {
    const FunctionalSpec& f = cfg.functional;
    switch (f.kind) {
        case FunctionalSpec::Kind::interaction: return InteractionEnergy{RieszKernel(f.r, f.norm)};
        case FunctionalSpec::Kind::mmd: {
            RandomSource target_rng = rng.split(0);
            return MmdToTarget{RieszKernel(f.r, f.norm), sample_target(*f.target, cfg.d, cfg.n, target_rng)};
        }
        case FunctionalSpec::Kind::branching: return BranchingEnergy{};
        case FunctionalSpec::Kind::zero: return ZeroFunctional{};
        case FunctionalSpec::Kind::barycenter: {
            Barycenter b{RieszKernel(f.r, f.norm), {}};
            for (std::size_t k = 0; k < f.components.size(); ++k) {
                RandomSource comp_rng = rng.split(k + 1);
                b.components.push_back(
                    {f.components[k].weight, sample_target(f.components[k].target, cfg.d, cfg.n, comp_rng)});
            }
            return b;
        }
    }
    throw Error("unknown functional kind");
}

double mmd_distance(const ParticleCloud& a, const ParticleCloud& b) {
    if (a == b) return 0.0;
    const RieszKernel k(1.0);
    const double d2 = a.dim() == 1 ? mmd_squared_1d_fast(k, a, b) : mmd_squared(k, a, b);
    return std::sqrt(std::max(d2, 0.0));
}

std::vector<MetricRow> compare_to_analytic(const std::vector<Snapshot>& snapshots, std::size_t d, double r,
                                           std::uint64_t seed) {
    const EtaStar eta = eta_star_params(d, r);
    std::vector<MetricRow> rows;
    rows.reserve(snapshots.size());
    for (const auto& s : snapshots) {
        if (s.cloud.dim() != d) throw ShapeError("snapshot dimension differs from d");
        RandomSource rng(seed);
        const ParticleCloud reference = sample_limit_flow(eta, s.t, s.cloud.size(), rng);
        rows.push_back({s.t, mmd_distance(s.cloud, reference), w2_radial(s.cloud, reference)});
    }
    return rows;
}

void write_metric_rows(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::string out = "t,mmd,w2_radial\n";
    for (const auto& r : rows) {
        out += row_prefix(r.t) + "," + io::format_double(r.mmd_to_reference) + "," +
               (r.w2_radial_to_reference ? io::format_double(*r.w2_radial_to_reference) : std::string("nan")) + "\n";
    }
    io::atomic_write(path, out);
}

void write_snapshot_csv(const std::filesystem::path& path, const Snapshot& s) {
    std::string out = "t";
    for (std::size_t k = 0; k < s.cloud.dim(); ++k) out += ",x" + std::to_string(k);
    out += '\n';
    const std::string t = row_prefix(s.t);
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        out += t;
        for (std::size_t k = 0; k < s.cloud.dim(); ++k) {
            out += ',';
            out += io::format_double(s.cloud(i, k));
        }
        out += '\n';
    }
    io::atomic_write(path, out);
}

Snapshot read_snapshot_csv(const std::filesystem::path& path) {
    const io::CsvTable table = io::read_csv(path);
    if (table.header.size() < 2 || table.header[0] != "t") {
        throw ParseError(path.string() + ": expected header t,x0,...", 1);
    }
    for (std::size_t k = 1; k < table.header.size(); ++k) {
        if (table.header[k] != "x" + std::to_string(k - 1)) {
            throw ParseError(path.string() + ": expected column x" + std::to_string(k - 1), 1);
        }
    }
    if (table.rows.empty()) throw ParseError(path.string() + ": snapshot has no particles", 2);
    const auto d = static_cast<Eigen::Index>(table.header.size() - 1);
    Points x(static_cast<Eigen::Index>(table.rows.size()), d);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (table.rows[i][0] != table.rows[0][0]) throw ParseError(path.string() + ": t differs between rows", i + 2);
        for (Eigen::Index k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), k) = table.rows[i][static_cast<std::size_t>(k + 1)];
    }
    return {table.rows[0][0], ParticleCloud(std::move(x))};
}

std::vector<Snapshot> read_trace_dir(const std::filesystem::path& dir) {
    std::vector<std::pair<std::size_t, std::filesystem::path>> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.starts_with("step_") || !name.ends_with(".csv")) continue;
        const std::string digits = name.substr(5, name.size() - 9);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            continue;
        }
        files.emplace_back(std::stoul(digits), entry.path());
    }
    if (files.empty()) throw Error("no step_{k}.csv files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<Snapshot> out;
    for (const auto& [k, path] : files) out.push_back(read_snapshot_csv(path));
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (!(out[i].t > out[i - 1].t)) throw Error("snapshot times in " + dir.string() + " are not increasing");
    }
    return out;
}

double GradcheckReport::worst() const {
    return std::max({backward_interaction, backward_mmd, forward_spread, forward_dirac});
}

namespace {

double relative_error(const MlpParams& a, const MlpParams& b) {
    const auto fa = a.flatten();
    const auto fb = b.flatten();
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < fa.size(); ++k) {
        diff += (fa[k] - fb[k]) * (fa[k] - fb[k]);
        na += fa[k] * fa[k];
        nb += fb[k] * fb[k];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale > 0.0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed) {
    constexpr std::size_t n = 12;
    constexpr std::size_t d = 2;
    constexpr double h = 1e-6;
    constexpr double tau = 0.05;
    RandomSource rng(seed);
    const MlpParams p = init_mlp(rng, d, {8, 8});
    const Points x = sample_latent(rng, n, d).points();
    const Points z = sample_latent(rng, n, d).points();
    const ParticleCloud target = sample_latent(rng, 7, d);

    auto check_backward = [&](const Functional& f) {
        MlpParams g;
        backward_loss(p, x, z, f, tau, &g);
        const MlpParams fd =
            finite_difference_gradient([&](const MlpParams& q) { return backward_loss(q, x, z, f, tau); }, p, h);
        return relative_error(g, fd);
    };
    auto check_forward = [&](const Points& base) {
        const DirectionalDerivativeModel model(InteractionEnergy{RieszKernel(1.0)}, ParticleCloud(base));
        MlpParams g;
        forward_loss(p, base, z, model, &g);
        const MlpParams fd =
            finite_difference_gradient([&](const MlpParams& q) { return forward_loss(q, base, z, model); }, p, h);
        return relative_error(g, fd);
    };
    GradcheckReport report{};
    report.backward_interaction = check_backward(InteractionEnergy{RieszKernel(1.0)});
    report.backward_mmd = check_backward(MmdToTarget{RieszKernel(1.5), target});
    report.forward_spread = check_forward(x);
    report.forward_dirac = check_forward(Points::Zero(n, d));
    return report;
}

namespace {

std::filesystem::path step_path(const std::filesystem::path& dir, std::size_t k, const char* ext) {
    return dir / ("step_" + std::to_string(k) + ext);
}

ParticleCloud line_reference(double t, std::size_t n) {
    Points x(static_cast<Eigen::Index>(n), 1);
    const auto grid = QuantileCurve::midpoint_grid(n);
    for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), 0) = line_flow_quantile(t, grid[i]);
    return ParticleCloud(std::move(x));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const StepCallback& on_step) {
    validate_config(cfg);
    const RandomSource root(cfg.seed);
    RandomSource target_rng = root.split(kTargetStream);
    const Functional f = build_functional(cfg, target_rng);
    RandomSource init_rng = root.split(kInitStream);
    const ParticleCloud start = make_initial(cfg.initializer, cfg.n, init_rng);
    const StepSchedule schedule(cfg.schedule);
    TrainConfig train = cfg.train;
    train.seed = cfg.seed;

    std::filesystem::create_directories(cfg.output_dir);
    std::size_t index = 0;
    auto write_snapshot = [&](const Snapshot& s) {
        write_snapshot_csv(step_path(cfg.output_dir, index, ".csv"), s);
        if (cfg.svg) emit_svg(s.cloud, std::nullopt, step_path(cfg.output_dir, index, ".svg"));
        ++index;
    };
    write_snapshot({0.0, start});
    RandomSource flow_rng = root.split(kFlowStream);
    ExperimentResult result;
    result.trace = run_flow(cfg.scheme, f, start, schedule, cfg.horizon, train, flow_rng,
                            [&](const Snapshot& s, const StepDiagnostics& d) {
                                write_snapshot(s);
                                if (on_step) on_step(s, d);
                            });

    std::string diag = "t,energy,scale,loss\n";
    for (const auto& d : result.trace.diagnostics) {
        diag += row_prefix(d.t) + "," + io::format_double(d.functional_value) + "," + io::format_double(d.scale) +
                "," + io::format_double(d.loss) + "\n";
    }
    io::atomic_write(cfg.output_dir / "diagnostics.csv", diag);

    result.metric_names = cfg.metrics.empty() ? std::vector<std::string>{"energy"} : cfg.metrics;
    std::optional<ParticleCloud> mixture;
    std::optional<EtaStar> eta;
    const auto& snaps = result.trace.snapshots;
    for (const auto& s : snaps) {
        std::vector<double> row;
        for (const auto& m : result.metric_names) {
            if (m == "energy") {
                row.push_back(functional_value(f, s.cloud));
            } else if (m == "mmd_analytic" || m == "w2_radial_analytic") {
                if (!eta) eta = eta_star_params(cfg.d, cfg.functional.r);
                RandomSource rng = root.split(kAnalyticStream);
                const ParticleCloud ref = sample_limit_flow(*eta, s.t, s.cloud.size(), rng);
                row.push_back(m == "mmd_analytic" ? mmd_distance(s.cloud, ref) : w2_radial(s.cloud, ref));
            } else if (m == "mmd_target") {
                if (const auto* t = std::get_if<MmdToTarget>(&f)) {
                    row.push_back(mmd_distance(s.cloud, t->target));
                } else {
                    if (!mixture) {
                        // Fresh sample of Σ α_k μ_k, independent of the samples inside the functional.
                        const auto& comps = cfg.functional.components;
                        std::vector<Points> parts;
                        Eigen::Index rows = 0;
                        for (std::size_t k = 0; k < comps.size(); ++k) {
                            const auto count =
                                static_cast<std::size_t>(std::llround(comps[k].weight * static_cast<double>(cfg.n)));
                            if (count == 0) continue;
                            RandomSource rng = root.split(kMixtureStream).split(k);
                            TargetSpec spec = comps[k].target;
                            spec.n = count;
                            parts.push_back(sample_target(spec, cfg.d, count, rng).points());
                            rows += parts.back().rows();
                        }
                        Points all(rows, static_cast<Eigen::Index>(cfg.d));
                        Eigen::Index at = 0;
                        for (const auto& p : parts) {
                            all.middleRows(at, p.rows()) = p;
                            at += p.rows();
                        }
                        mixture.emplace(std::move(all));
                    }
                    row.push_back(mmd_distance(s.cloud, *mixture));
                }
            } else if (m == "mmd_line_analytic" || m == "w2_line_analytic") {
                const ParticleCloud ref = line_reference(s.t, s.cloud.size());
                row.push_back(m == "mmd_line_analytic" ? mmd_distance(s.cloud, ref) : w2_1d(s.cloud, ref));
            }
        }
        result.metric_values.push_back(std::move(row));
    }
    std::string metrics = "t";
    for (const auto& m : result.metric_names) metrics += "," + m;
    metrics += '\n';
    for (std::size_t i = 0; i < snaps.size(); ++i) {
        metrics += row_prefix(snaps[i].t);
        for (double v : result.metric_values[i]) metrics += "," + io::format_double(v);
        metrics += '\n';
    }
    io::atomic_write(cfg.output_dir / "metrics.csv", metrics);
    return result;
}

}  // namespace wflow
