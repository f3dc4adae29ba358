// wflow: run flows from JSON configs and produce analytic reference data.

#include "wflow/analytic.hpp"
#include "wflow/error.hpp"
#include "wflow/harness.hpp"
#include "wflow/io.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>

namespace {

using namespace wflow;

struct Globals {
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
};

int cmd_run(const std::string& config_path, const std::optional<std::string>& scheme,
            const std::optional<std::string>& out, const Globals& g, bool quiet) {
    ExperimentConfig cfg = load_config(config_path);
    if (scheme) {
        auto s = parse_scheme(*scheme);
        if (!s) throw ValidationError({"--scheme: expected backward, forward or particle"});
        cfg.scheme = *s;
    }
    if (out) cfg.output_dir = *out;
    if (g.seed) cfg.seed = *g.seed;
    if (g.deterministic) cfg.deterministic = true;
    const auto result = run_experiment(cfg, [&](const Snapshot& s, const StepDiagnostics& d) {
        if (quiet) return;
        std::fprintf(stderr, "t=%-8.4g F=%-12.6g", s.t, d.functional_value);
        if (!std::isnan(d.scale)) std::fprintf(stderr, " scale=%-10.4g", d.scale);
        if (!std::isnan(d.loss)) std::fprintf(stderr, " loss=%.6g", d.loss);
        std::fputc('\n', stderr);
    });
    std::printf("%zu snapshots written to %s\n", result.trace.snapshots.size(), cfg.output_dir.string().c_str());
    return 0;
}

int cmd_analytic(std::size_t d, double r, double tau, std::size_t steps, const std::string& out, std::size_t samples,
                 const Globals& g) {
    if (steps < 1) throw ValidationError({"--steps: must be at least 1"});
    const auto seq = jko_time_sequence(r, tau, steps);
    std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);

    std::string times = "n,t\n";
    for (std::size_t k = 0; k < seq.values.size(); ++k) {
        times += std::to_string(k) + "," + io::format_double(seq.values[k]) + "\n";
    }
    io::atomic_write(dir / "jko_times.csv", times);

    // 20 points per step so the staircase f_τ is visible next to f.
    std::string curves = "t,f,f_tau\n";
    constexpr std::size_t per_step = 20;
    for (std::size_t k = 0; k <= steps * per_step; ++k) {
        const double t = tau * static_cast<double>(k) / per_step;
        curves += io::format_double(t) + "," + io::format_double(limit_curve_scale(t, r)) + "," +
                  io::format_double(scheme_scale_curve(seq, t)) + "\n";
    }
    io::atomic_write(dir / "scale_curves.csv", curves);

    const EtaStar eta = eta_star_params(d, r);
    std::string info = "d,r,law,radius,exponent,normalizer\n" + std::to_string(d) + "," + io::format_double(r) + ",";
    if (const auto* b = std::get_if<BallDensity>(&eta.law)) {
        info += "ball," + io::format_double(b->s) + "," + io::format_double(b->exponent) + "," +
                io::format_double(b->normalizer) + "\n";
    } else {
        info += "sphere," + io::format_double(eta.radius()) + ",nan,nan\n";
    }
    io::atomic_write(dir / "eta_star.csv", info);
    if (samples > 0) {
        RandomSource rng(g.seed.value_or(0));
        write_points_csv(dir / "eta_star_samples.csv", sample_eta_star(eta, samples, rng));
    }
    std::printf("wrote jko_times.csv, scale_curves.csv, eta_star.csv%s to %s\n",
                samples > 0 ? ", eta_star_samples.csv" : "", dir.string().c_str());
    return 0;
}

int cmd_compare(const std::string& trace_dir, std::size_t d, double r, const std::string& out, const Globals& g) {
    const auto snaps = read_trace_dir(trace_dir);
    const auto rows = compare_to_analytic(snaps, d, r, g.seed.value_or(0));
    write_metric_rows(out, rows);
    for (const auto& row : rows) {
        std::printf("t=%-8.4g mmd=%-12.6g w2_radial=%.6g\n", row.t, row.mmd_to_reference,
                    row.w2_radial_to_reference.value_or(NAN));
    }
    return 0;
}

int cmd_gradcheck(const Globals& g) {
    const auto rep = run_gradcheck(g.seed.value_or(0));
    std::printf("backward loss, interaction r=1   rel err %.3e\n", rep.backward_interaction);
    std::printf("backward loss, mmd r=1.5         rel err %.3e\n", rep.backward_mmd);
    std::printf("forward loss, spread particles   rel err %.3e\n", rep.forward_spread);
    std::printf("forward loss, coincident at 0    rel err %.3e\n", rep.forward_dirac);
    const bool ok = rep.worst() <= 1e-5;
    std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED (tolerance 1e-5)");
    return ok ? 0 : 1;
}

int cmd_selftest(const Globals& g) {
    int failures = 0;
    auto report = [&](bool ok, const char* what) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", what);
        if (!ok) ++failures;
    };
    const auto seq = jko_time_sequence(1.0, 0.05, 200);
    double worst = 0.0;
    for (std::size_t k = 0; k <= 200; ++k) worst = std::max(worst, std::abs(seq.values[k] - 0.05 * static_cast<double>(k)));
    report(worst <= 1e-12, "JKO times at r=1 equal n*tau");
    report(std::abs(eta_star_params(2, 1.0).radius() - std::numbers::pi / 4) <= 1e-12, "ball radius s(2,1) = pi/4");
    report(std::abs(eta_star_params(3, 1.0).radius() - 2.0 / 3.0) <= 1e-10, "sphere radius c(3,1) = 2/3");
    RandomSource rng(g.seed.value_or(0));
    const auto cloud = sample_eta_star(eta_star_params(3, 1.0), 1000, rng);
    double dev = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) dev = std::max(dev, std::abs(cloud.points().row(static_cast<Eigen::Index>(i)).norm() - 2.0 / 3.0));
    report(dev <= 1e-12, "sphere samples have norm 2/3");
    report(run_gradcheck(g.seed.value_or(0)).worst() <= 1e-5, "tape gradients match central differences");
    const auto moved = particle_flow_step(ParticleCloud::from_rows({{0, 0}, {1, 0}}),
                                          InteractionEnergy{RieszKernel(1.0)}, 0.1);
    report(std::abs(moved(0, 0) + 0.05) <= 1e-15 && std::abs(moved(1, 0) - 1.05) <= 1e-15,
           "two-particle repulsion step");
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wasserstein gradient flows of Riesz-kernel functionals"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Seed overriding the config");
    app.add_flag("--deterministic", g.deterministic, "Require bit-reproducible output");

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    std::string config_path;
    std::optional<std::string> scheme, out_dir;
    bool quiet = false;
    run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--scheme", scheme, "Override the scheme (backward, forward, particle)");
    run->add_option("--out", out_dir, "Override the output directory");
    run->add_flag("--quiet", quiet, "No per-step progress");

    const CLI::Validator riesz_range(
        [](std::string& v) {
            const double x = std::stod(v);
            return x > 0 && x < 2 ? std::string() : "Riesz exponent must lie in (0,2)";
        },
        "in (0,2)");

    auto* analytic = app.add_subcommand("analytic", "JKO times, scale curves and eta* samples");
    std::size_t d = 2, steps = 12, samples = 1000;
    double r = 1.0, tau = 0.05;
    std::string out = "analytic";
    analytic->add_option("--d", d, "Dimension")->required();
    analytic->add_option("--r", r, "Riesz exponent")->required()->check(riesz_range);
    analytic->add_option("--tau", tau, "Step size")->required();
    analytic->add_option("--steps", steps, "Number of JKO steps")->required();
    analytic->add_option("--out", out, "Output directory")->required();
    analytic->add_option("--samples", samples, "eta* samples to write (0 for none)");

    auto* compare = app.add_subcommand("compare", "Distance of a trace to the analytic interaction flow");
    std::string trace_dir, compare_out;
    std::size_t cd = 2;
    double cr = 1.0;
    compare->add_option("--trace-dir", trace_dir, "Directory with step_{k}.csv")->required()->check(CLI::ExistingDirectory);
    compare->add_option("--d", cd, "Dimension")->required();
    compare->add_option("--r", cr, "Riesz exponent")->required()->check(riesz_range);
    compare->add_option("--out", compare_out, "Output CSV")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "Check tape gradients of the training losses");
    auto* selftest = app.add_subcommand("selftest", "Quick consistency checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(config_path, scheme, out_dir, g, quiet);
        if (*analytic) return cmd_analytic(d, r, tau, steps, out, samples, g);
        if (*compare) return cmd_compare(trace_dir, cd, cr, compare_out, g);
        if (*gradcheck) return cmd_gradcheck(g);
        if (*selftest) return cmd_selftest(g);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const StepError& e) {
        std::cerr << "error: " << e.what() << "\n";
        try {
            std::rethrow_if_nested(e);
        } catch (const std::exception& inner) {
            std::cerr << "  cause: " << inner.what() << "\n";
        }
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
