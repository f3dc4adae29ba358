#include "wflow/config.hpp"

#include "wflow/error.hpp"
#include "wflow/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace wflow {

using nlohmann::json;

const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> names{"energy",          "mmd_analytic",      "w2_radial_analytic",
                                                "mmd_target",      "mmd_line_analytic", "w2_line_analytic"};
    return names;
}

namespace {

// Collects every problem instead of stopping at the first.
class Reader {
public:
    std::vector<std::string> problems;
    std::filesystem::path base_dir;

    void fail(const std::string& where, const std::string& what) { problems.push_back(where + ": " + what); }

    bool object(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
        if (!j.is_object()) {
            fail(where, "expected an object");
            return false;
        }
        for (const auto& [key, value] : j.items()) {
            if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
                fail(where, "unknown key '" + key + "'");
            }
        }
        return true;
    }

    bool has(const json& j, const char* key) const { return j.is_object() && j.contains(key); }

    double number(const json& j, const char* key, const std::string& where, double fallback, bool required = false) {
        if (!has(j, key)) {
            if (required) fail(where, std::string("missing '") + key + "'");
            return fallback;
        }
        if (!j[key].is_number()) {
            fail(where + "." + key, "expected a number");
            return fallback;
        }
        return j[key].get<double>();
    }

    std::size_t count(const json& j, const char* key, const std::string& where, std::size_t fallback,
                      bool required = false) {
        if (!has(j, key)) {
            if (required) fail(where, std::string("missing '") + key + "'");
            return fallback;
        }
        if (!j[key].is_number_unsigned()) {
            fail(where + "." + key, "expected a nonnegative integer");
            return fallback;
        }
        return j[key].get<std::size_t>();
    }

    std::string text(const json& j, const char* key, const std::string& where, std::string fallback,
                     bool required = false) {
        if (!has(j, key)) {
            if (required) fail(where, std::string("missing '") + key + "'");
            return fallback;
        }
        if (!j[key].is_string()) {
            fail(where + "." + key, "expected a string");
            return fallback;
        }
        return j[key].get<std::string>();
    }

    bool flag(const json& j, const char* key, const std::string& where, bool fallback) {
        if (!has(j, key)) return fallback;
        if (!j[key].is_boolean()) {
            fail(where + "." + key, "expected true or false");
            return fallback;
        }
        return j[key].get<bool>();
    }

    std::vector<double> vec(const json& j, const char* key, const std::string& where, bool required = true) {
        if (!has(j, key)) {
            if (required) fail(where, std::string("missing '") + key + "'");
            return {};
        }
        return vec_value(j[key], where + "." + key);
    }

    std::vector<double> vec_value(const json& v, const std::string& where) {
        std::vector<double> out;
        if (!v.is_array() || v.empty()) {
            fail(where, "expected a non-empty array of numbers");
            return out;
        }
        for (const auto& e : v) {
            if (!e.is_number()) {
                fail(where, "expected a non-empty array of numbers");
                return {};
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::vector<double>> vecs(const json& j, const char* key, const std::string& where) {
        std::vector<std::vector<double>> out;
        if (!has(j, key)) {
            fail(where, std::string("missing '") + key + "'");
            return out;
        }
        if (!j[key].is_array() || j[key].empty()) {
            fail(where + "." + key, "expected a non-empty array of points");
            return out;
        }
        for (std::size_t i = 0; i < j[key].size(); ++i) {
            out.push_back(vec_value(j[key][i], where + "." + key + "[" + std::to_string(i) + "]"));
        }
        return out;
    }

    std::filesystem::path file(const json& j, const char* key, const std::string& where) {
        const std::string p = text(j, key, where, "", true);
        if (p.empty()) return {};
        std::filesystem::path path(p);
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        return path;
    }

    TargetSpec target(const json& j, const std::string& where) {
        TargetSpec t;
        if (!j.is_object()) {
            fail(where, "expected an object");
            return t;
        }
        const std::string kind = text(j, "kind", where, "", true);
        if (kind == "points") {
            object(j, where, {"kind", "path"});
            t.kind = TargetSpec::Kind::points;
            t.path = file(j, "path", where);
        } else if (kind == "image") {
            object(j, where, {"kind", "path", "n"});
            t.kind = TargetSpec::Kind::image;
            t.path = file(j, "path", where);
            t.n = count(j, "n", where, 0);
        } else if (kind == "dirac_sum") {
            object(j, where, {"kind", "centers"});
            t.kind = TargetSpec::Kind::dirac_sum;
            t.centers = vecs(j, "centers", where);
        } else if (kind == "circle" || kind == "square_boundary") {
            object(j, where, {"kind", "center", "radius", "n"});
            t.kind = kind == "circle" ? TargetSpec::Kind::circle : TargetSpec::Kind::square_boundary;
            t.center = vec(j, "center", where);
            t.radius = number(j, "radius", where, 1.0, true);
            t.n = count(j, "n", where, 0);
        } else if (kind == "gaussian") {
            object(j, where, {"kind", "center", "stddev", "n"});
            t.kind = TargetSpec::Kind::gaussian;
            t.center = vec(j, "center", where);
            t.stddev = number(j, "stddev", where, 1.0, true);
            t.n = count(j, "n", where, 0);
        } else if (!kind.empty()) {
            fail(where + ".kind", "unknown target kind '" + kind +
                                      "' (points, image, dirac_sum, circle, square_boundary, gaussian)");
        }
        return t;
    }

    FunctionalSpec functional(const json& j, const std::string& where) {
        FunctionalSpec f;
        if (!object(j, where, {"kind", "r", "norm", "target", "components"})) return f;
        const std::string kind = text(j, "kind", where, "", true);
        if (kind == "interaction") f.kind = FunctionalSpec::Kind::interaction;
        else if (kind == "mmd") f.kind = FunctionalSpec::Kind::mmd;
        else if (kind == "branching") f.kind = FunctionalSpec::Kind::branching;
        else if (kind == "barycenter") f.kind = FunctionalSpec::Kind::barycenter;
        else if (kind == "zero") f.kind = FunctionalSpec::Kind::zero;
        else if (!kind.empty()) {
            fail(where + ".kind", "unknown functional '" + kind + "' (interaction, mmd, branching, barycenter, zero)");
        }
        f.r = number(j, "r", where, 1.0);
        const std::string norm = text(j, "norm", where, "l2");
        if (norm == "l1") f.norm = Norm::l1;
        else if (norm != "l2") fail(where + ".norm", "expected 'l2' or 'l1'");
        if (has(j, "target")) f.target = target(j["target"], where + ".target");
        if (has(j, "components")) {
            const json& comps = j["components"];
            if (!comps.is_array()) {
                fail(where + ".components", "expected an array");
            } else {
                for (std::size_t k = 0; k < comps.size(); ++k) {
                    const std::string at = where + ".components[" + std::to_string(k) + "]";
                    if (!object(comps[k], at, {"weight", "target"})) continue;
                    FunctionalSpec::Component c{number(comps[k], "weight", at, 0.0, true), {}};
                    if (has(comps[k], "target")) c.target = target(comps[k]["target"], at + ".target");
                    else fail(at, "missing 'target'");
                    f.components.push_back(std::move(c));
                }
            }
        }
        return f;
    }

    Initializer initializer(const json& j, const std::string& where) {
        if (!j.is_object()) {
            fail(where, "expected an object");
            return Dirac{};
        }
        const std::string kind = text(j, "kind", where, "", true);
        if (kind == "dirac") {
            object(j, where, {"kind", "center"});
            return Dirac{vec(j, "center", where)};
        }
        if (kind == "dirac_sum") {
            object(j, where, {"kind", "centers"});
            return DiracSum{vecs(j, "centers", where)};
        }
        if (kind == "uniform_square") {
            object(j, where, {"kind", "center", "radius"});
            return UniformSquare{vec(j, "center", where), number(j, "radius", where, 1.0, true)};
        }
        if (kind == "square_sum") {
            object(j, where, {"kind", "centers", "radius"});
            return SquareSum{vecs(j, "centers", where), number(j, "radius", where, 1.0, true)};
        }
        if (kind == "circle") {
            object(j, where, {"kind", "center", "radius"});
            return Circle{vec(j, "center", where), number(j, "radius", where, 1.0, true)};
        }
        if (kind == "gaussian") {
            object(j, where, {"kind", "center", "stddev"});
            return Gaussian{vec(j, "center", where), number(j, "stddev", where, 1.0, true)};
        }
        if (kind == "ellipse") {
            object(j, where, {"kind", "center", "semi_axes"});
            return Ellipse{vec(j, "center", where), vec(j, "semi_axes", where)};
        }
        if (kind == "cross") {
            object(j, where, {"kind", "center", "radius"});
            return Cross{vec(j, "center", where), number(j, "radius", where, 1.0, true)};
        }
        if (!kind.empty()) {
            fail(where + ".kind", "unknown initializer '" + kind +
                                      "' (dirac, dirac_sum, uniform_square, square_sum, circle, gaussian, ellipse, cross)");
        }
        return Dirac{};
    }

    TrainConfig train(const json& j, const std::string& where) {
        TrainConfig t;
        if (!object(j, where, {"hidden", "learning_rate", "batch", "first_steps", "first_iterations", "iterations"})) {
            return t;
        }
        if (has(j, "hidden")) {
            t.hidden.clear();
            for (double w : vec(j, "hidden", where)) {
                if (!(w >= 1.0) || w != std::floor(w)) {
                    fail(where + ".hidden", "widths must be positive integers");
                    break;
                }
                t.hidden.push_back(static_cast<std::size_t>(w));
            }
        }
        t.learning_rate = number(j, "learning_rate", where, t.learning_rate);
        t.batch = count(j, "batch", where, t.batch);
        t.first_steps = count(j, "first_steps", where, t.first_steps);
        t.first_iterations = count(j, "first_iterations", where, t.first_iterations);
        t.iterations = count(j, "iterations", where, t.iterations);
        return t;
    }
};

void check_target(const TargetSpec& t, std::size_t d, const std::string& where, std::vector<std::string>& problems) {
    auto fail = [&](const std::string& what) { problems.push_back(where + ": " + what); };
    switch (t.kind) {
        case TargetSpec::Kind::points:
        case TargetSpec::Kind::image:
            if (t.path.empty()) break;
            if (!std::filesystem::is_regular_file(t.path)) fail("file '" + t.path.string() + "' does not exist");
            if (t.kind == TargetSpec::Kind::image && d != 2) fail("image targets are two-dimensional");
            break;
        case TargetSpec::Kind::dirac_sum:
            for (const auto& c : t.centers) {
                if (!c.empty() && c.size() != d) fail("center dimension differs from d");
            }
            break;
        case TargetSpec::Kind::circle:
        case TargetSpec::Kind::square_boundary:
            if (d != 2) fail("circle and square_boundary targets are two-dimensional");
            if (!t.center.empty() && t.center.size() != 2) fail("center must have two coordinates");
            if (!(t.radius > 0.0)) fail("radius must be positive");
            break;
        case TargetSpec::Kind::gaussian:
            if (!t.center.empty() && t.center.size() != d) fail("center dimension differs from d");
            if (!(t.stddev > 0.0)) fail("stddev must be positive");
            break;
    }
}

bool riesz_kind(FunctionalSpec::Kind k) {
    return k == FunctionalSpec::Kind::interaction || k == FunctionalSpec::Kind::mmd ||
           k == FunctionalSpec::Kind::barycenter;
}

}  // namespace

void validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> problems;
    auto fail = [&](const std::string& what) { problems.push_back(what); };
    if (cfg.d < 1) fail("d: must be at least 1");
    if (cfg.n < 1) fail("n: must be at least 1");
    if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon)) fail("horizon: must be positive");

    const FunctionalSpec& f = cfg.functional;
    using K = FunctionalSpec::Kind;
    if (riesz_kind(f.kind) && !(f.r > 0.0 && f.r < 2.0)) fail("functional.r: must lie in (0,2)");
    if (f.kind == K::mmd) {
        if (!f.target) fail("functional.target: required for the mmd functional");
        else check_target(*f.target, cfg.d, "functional.target", problems);
    } else if (f.target) {
        fail("functional.target: only the mmd functional takes a target");
    }
    if (f.kind == K::barycenter) {
        if (f.components.empty()) fail("functional.components: the barycenter needs at least one component");
        double total = 0.0;
        for (std::size_t k = 0; k < f.components.size(); ++k) {
            const auto& c = f.components[k];
            if (!(c.weight >= 0.0)) fail("functional.components[" + std::to_string(k) + "].weight: must be >= 0");
            total += c.weight;
            check_target(c.target, cfg.d, "functional.components[" + std::to_string(k) + "].target", problems);
        }
        if (!f.components.empty() && std::abs(total - 1.0) > 1e-9) fail("functional.components: weights must sum to 1");
    } else if (!f.components.empty()) {
        fail("functional.components: only the barycenter functional takes components");
    }
    if (f.kind == K::branching && cfg.d != 2) fail("functional: the branching energy is two-dimensional");

    try {
        const std::size_t dim = initializer_dim(cfg.initializer);
        if (dim != cfg.d) fail("initializer: dimension " + std::to_string(dim) + " differs from d");
    } catch (const Error& e) {
        fail(std::string("initializer: ") + e.what());
    }
    std::visit(
        [&](const auto& init) {
            using T = std::decay_t<decltype(init)>;
            if constexpr (requires { init.radius; }) {
                if (!(init.radius > 0.0)) fail("initializer.radius: must be positive");
            }
            if constexpr (std::is_same_v<T, Gaussian>) {
                if (!(init.stddev > 0.0)) fail("initializer.stddev: must be positive");
            }
            if constexpr (std::is_same_v<T, Ellipse>) {
                if (init.semi_axes.size() != 2 || !(init.semi_axes[0] > 0.0) || !(init.semi_axes[1] > 0.0)) {
                    fail("initializer.semi_axes: two positive values required");
                }
            }
            if constexpr (std::is_same_v<T, Circle> || std::is_same_v<T, Ellipse> || std::is_same_v<T, Cross>) {
                if (cfg.d != 2) fail("initializer: this shape is two-dimensional");
            }
        },
        cfg.initializer);

    if (cfg.schedule.empty()) {
        fail("schedule: at least one entry is required");
    } else {
        try {
            StepSchedule s(cfg.schedule);
        } catch (const Error& e) {
            fail(std::string("schedule: ") + e.what());
        }
    }
    if (cfg.scheme != Scheme::particle) {
        try {
            cfg.train.validate();
        } catch (const Error& e) {
            fail(std::string("train: ") + e.what());
        }
    } else {
        const bool all_equal = std::holds_alternative<Dirac>(cfg.initializer) && cfg.n >= 2;
        const auto* sum = std::get_if<DiracSum>(&cfg.initializer);
        if (all_equal || (sum && cfg.n > sum->centers.size())) {
            fail("initializer: the particle scheme needs pairwise distinct particles, but a Dirac initializer "
                 "places several at one point; use uniform_square or square_sum with a tiny radius (e.g. 1e-9)");
        }
    }

    for (const auto& m : cfg.metrics) {
        const auto& known = known_metrics();
        if (std::find(known.begin(), known.end(), m) == known.end()) {
            fail("metrics: unknown metric '" + m + "'");
            continue;
        }
        if (m == "mmd_analytic" || m == "w2_radial_analytic") {
            const auto* dirac = std::get_if<Dirac>(&cfg.initializer);
            const bool at_origin = dirac && std::all_of(dirac->center.begin(), dirac->center.end(),
                                                        [](double v) { return v == 0.0; });
            const auto* square = std::get_if<UniformSquare>(&cfg.initializer);
            const bool near_origin = square && square->radius <= 1e-6 &&
                                     std::all_of(square->center.begin(), square->center.end(),
                                                 [](double v) { return v == 0.0; });
            if (f.kind != K::interaction || f.norm != Norm::l2 || !(at_origin || near_origin)) {
                fail("metrics: '" + m + "' needs the Euclidean interaction energy started at the origin");
            }
        }
        if (m == "mmd_target" && f.kind != K::mmd && f.kind != K::barycenter) {
            fail("metrics: 'mmd_target' needs the mmd or barycenter functional");
        }
        if ((m == "mmd_line_analytic" || m == "w2_line_analytic") &&
            (cfg.d != 1 || f.kind != K::mmd || f.r != 1.0)) {
            fail("metrics: '" + m + "' needs the one-dimensional mmd functional with r = 1");
        }
    }
    if (cfg.svg && cfg.d != 2) fail("svg: plots are only drawn for d = 2");
    if (!problems.empty()) throw ValidationError(std::move(problems));
}

ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte);
    }
    Reader in;
    in.base_dir = base_dir;
    ExperimentConfig cfg;
    if (!in.object(j, "config",
                   {"scheme", "functional", "d", "n", "initializer", "schedule", "tau", "horizon", "train", "seed",
                    "output_dir", "deterministic", "metrics", "svg", "description"})) {
        throw ValidationError(std::move(in.problems));
    }
    const std::string scheme = in.text(j, "scheme", "config", "", true);
    if (auto s = parse_scheme(scheme)) cfg.scheme = *s;
    else if (!scheme.empty()) in.fail("config.scheme", "expected backward, forward or particle");
    if (in.has(j, "functional")) cfg.functional = in.functional(j["functional"], "config.functional");
    else in.fail("config", "missing 'functional'");
    cfg.d = in.count(j, "d", "config", cfg.d, true);
    cfg.n = in.count(j, "n", "config", cfg.n, true);
    if (in.has(j, "initializer")) cfg.initializer = in.initializer(j["initializer"], "config.initializer");
    else in.fail("config", "missing 'initializer'");
    if (in.has(j, "schedule") && in.has(j, "tau")) {
        in.fail("config", "give either 'schedule' or 'tau', not both");
    } else if (in.has(j, "tau")) {
        cfg.schedule = {{0.0, in.number(j, "tau", "config", 0.05)}};
    } else if (in.has(j, "schedule")) {
        cfg.schedule.clear();
        const json& s = j["schedule"];
        if (!s.is_array()) in.fail("config.schedule", "expected an array of {from, tau}");
        else {
            for (std::size_t k = 0; k < s.size(); ++k) {
                const std::string at = "config.schedule[" + std::to_string(k) + "]";
                if (!in.object(s[k], at, {"from", "tau"})) continue;
                cfg.schedule.push_back({in.number(s[k], "from", at, 0.0, true), in.number(s[k], "tau", at, 0.0, true)});
            }
        }
    } else {
        in.fail("config", "missing 'schedule' or 'tau'");
    }
    cfg.horizon = in.number(j, "horizon", "config", 0.0, true);
    if (in.has(j, "train")) cfg.train = in.train(j["train"], "config.train");
    if (in.has(j, "seed")) {
        if (!j["seed"].is_number_unsigned()) in.fail("config.seed", "expected a nonnegative integer");
        else cfg.seed = j["seed"].get<std::uint64_t>();
    }
    cfg.train.seed = cfg.seed;
    cfg.output_dir = in.text(j, "output_dir", "config", cfg.output_dir.string());
    if (cfg.output_dir.is_relative() && !base_dir.empty()) cfg.output_dir = base_dir / cfg.output_dir;
    cfg.deterministic = in.flag(j, "deterministic", "config", cfg.deterministic);
    cfg.svg = in.flag(j, "svg", "config", cfg.svg);
    if (in.has(j, "description") && !j["description"].is_string()) in.fail("config.description", "expected a string");
    if (in.has(j, "metrics")) {
        if (!j["metrics"].is_array()) in.fail("config.metrics", "expected an array of names");
        else {
            for (const auto& m : j["metrics"]) {
                if (m.is_string()) cfg.metrics.push_back(m.get<std::string>());
                else in.fail("config.metrics", "expected an array of names");
            }
        }
    }
    if (!in.problems.empty()) {
        // report the semantic problems of the fields that did parse as well
        try {
            validate_config(cfg);
        } catch (const ValidationError& e) {
            in.problems.insert(in.problems.end(), e.problems().begin(), e.problems().end());
        }
        throw ValidationError(std::move(in.problems));
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(io::read_file(path), path.parent_path());
}

}  // namespace wflow
