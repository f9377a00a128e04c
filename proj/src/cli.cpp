#include "lietorch/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "lietorch/equivariance.hpp"
#include "lietorch/io.hpp"
#include "lietorch/kernels.hpp"
#include "lietorch/oracle.hpp"
#include "lietorch/parallel.hpp"
#include "lietorch/train.hpp"

namespace lietorch::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ------------------------------------------------------------- layer spec JSON

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

std::array<double, 3> triple(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument(what + " must be an array of three numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

MetricParams metric_from(const json& j, const std::string& what) {
    const auto w = triple(j, what);
    for (double v : w)
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(what + ": metric weights must be positive");
    return MetricParams::from_weights(w[0], w[1], w[2]);
}

json metric_json(const MetricParams& m) { return {m.weight(0), m.weight(1), m.weight(2)}; }

}  // namespace

CDELayerSpec layer_spec_from_json(const json& j) {
    check_keys(j, {"alpha", "T", "radii", "padding", "channels", "affine"}, "layer spec");
    CDELayerSpec spec;
    spec.alpha = j.value("alpha", spec.alpha);
    spec.T = j.value("T", spec.T);
    if (j.contains("radii")) {
        const auto r = j.at("radii").get<std::vector<int>>();
        if (r.size() != 3) throw std::invalid_argument("layer spec: radii must have three entries");
        spec.radii = {r[0], r[1], r[2]};
    }
    if (j.contains("padding")) spec.padding = parse_padding(j.at("padding").get<std::string>());
    if (!j.contains("channels") || !j.at("channels").is_array() || j.at("channels").empty())
        throw std::invalid_argument("layer spec: 'channels' must be a non-empty array");
    for (const auto& c : j.at("channels")) {
        check_keys(c, {"convection", "dilation", "erosion", "diffusion"}, "layer spec channel");
        ChannelPDE ch;
        if (c.contains("convection")) {
            const auto v = triple(c.at("convection"), "convection");
            ch.convection = {v[0], v[1], v[2]};
        }
        ch.dilation = c.contains("dilation") ? metric_from(c.at("dilation"), "dilation") : MetricParams();
        ch.erosion = c.contains("erosion") ? metric_from(c.at("erosion"), "erosion") : MetricParams();
        if (c.contains("diffusion")) ch.diffusion = metric_from(c.at("diffusion"), "diffusion");
        spec.channels.push_back(ch);
    }
    const int in = static_cast<int>(spec.channels.size());
    if (j.contains("affine")) {
        const json& a = j.at("affine");
        check_keys(a, {"a", "b", "normalize"}, "layer spec affine");
        const auto rows = a.at("a").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw std::invalid_argument("layer spec affine: 'a' must have at least one row");
        spec.affine.rows = static_cast<int>(rows.size());
        spec.affine.cols = in;
        for (const auto& r : rows) {
            if (static_cast<int>(r.size()) != in)
                throw std::invalid_argument("layer spec affine: every row of 'a' needs one entry per channel");
            spec.affine.a.insert(spec.affine.a.end(), r.begin(), r.end());
        }
        spec.affine.b = a.contains("b") ? a.at("b").get<std::vector<double>>()
                                        : std::vector<double>(spec.affine.rows, 0.0);
        if (a.contains("normalize")) {
            const json& n = a.at("normalize");
            if (n.is_boolean()) {
                if (n.get<bool>()) spec.affine.normalize.assign(spec.affine.rows, true);
            } else {
                spec.affine.normalize = n.get<std::vector<bool>>();
            }
        }
    } else {
        spec.affine = AffineParams::identity(in);
    }
    spec.validate();
    return spec;
}

json layer_spec_to_json(const CDELayerSpec& spec) {
    json channels = json::array();
    for (const auto& ch : spec.channels) {
        json c = {{"convection", {ch.convection.c1, ch.convection.c2, ch.convection.c3}},
                  {"dilation", metric_json(ch.dilation)},
                  {"erosion", metric_json(ch.erosion)}};
        if (ch.diffusion) c["diffusion"] = metric_json(*ch.diffusion);
        channels.push_back(c);
    }
    json rows = json::array();
    for (int i = 0; i < spec.affine.rows; ++i) {
        json r = json::array();
        for (int k = 0; k < spec.affine.cols; ++k) r.push_back(spec.affine.at(i, k));
        rows.push_back(r);
    }
    json affine = {{"a", rows}, {"b", spec.affine.b}};
    if (!spec.affine.normalize.empty()) affine["normalize"] = spec.affine.normalize;
    return {{"alpha", spec.alpha},
            {"T", spec.T},
            {"radii", {spec.radii.rx, spec.radii.ry, spec.radii.rtheta}},
            {"padding", std::string(padding_name(spec.padding))},
            {"channels", channels},
            {"affine", affine}};
}

// ------------------------------------------------------------------ commands

namespace {

struct MetricOpts {
    double wM = 1.0, wL = 2.0, wA = 1.0 / kPi;

    MetricParams params() const {
        if (!(wM > 0.0 && wL > 0.0 && wA > 0.0)) throw std::invalid_argument("metric weights must be positive");
        return MetricParams::from_weights(wM, wL, wA);
    }
    json to_json() const { return {wM, wL, wA}; }
};

void add_metric(CLI::App* app, MetricOpts& m) {
    app->add_option("--wM", m.wM, "main (forward) metric weight")->capture_default_str();
    app->add_option("--wL", m.wL, "lateral metric weight")->capture_default_str();
    app->add_option("--wA", m.wA, "angular metric weight")->capture_default_str();
}

StencilRadii make_radii(const std::vector<int>& r) {
    if (r.size() != 3) throw std::invalid_argument("--radii expects three integers rx,ry,rtheta");
    if (r[0] < 0 || r[1] < 0) throw std::invalid_argument("--radii: spatial radii must be >= 0");
    return {r[0], r[1], r[2]};
}

/// Opens `path` for CSV, or falls back to stdout when it is empty.
struct CsvSink {
    std::ofstream file;
    std::ostream* os = &std::cout;

    explicit CsvSink(const std::string& path) {
        if (path.empty()) return;
        file.open(path);
        if (!file) throw std::invalid_argument("cannot write " + path);
        os = &file;
    }
    bool to_stdout() const { return os == &std::cout; }
    CsvSink& row(std::initializer_list<std::string> cells) {
        bool first = true;
        for (const auto& c : cells) {
            if (!first) *os << ',';
            *os << c;
            first = false;
        }
        *os << '\n';
        return *this;
    }
};

std::string F(double v) { return format_float(v); }
std::string I(long v) { return std::to_string(v); }

/// Human-readable lines plus the machine-readable summary.
struct Report {
    std::ostream* text = &std::cout;
    json summary = json::object();

    void line(const std::string& s) const { *text << s << '\n'; }
};

void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericalFailure(what + " is not finite");
}

// kernel ----------------------------------------------------------------------

struct KernelOpts {
    std::string kind = "morphological";
    MetricOpts metric{1.0, 1.0, 1.0};
    double t = 1.0, alpha = 0.65;
    int orientations = 16;
    std::vector<int> radii{3, 3, -1};
    std::string output;
};

void cmd_kernel(const KernelOpts& o, Report& rep) {
    const StencilRadii radii = make_radii(o.radii);
    KernelStencil st;
    if (o.kind == "morphological")
        st = sample_morph_kernel({o.metric.params(), o.t, o.alpha}, o.orientations, radii);
    else if (o.kind == "diffusion")
        st = sample_diffusion_kernel({o.metric.params(), o.t}, o.orientations, radii);
    else
        throw std::invalid_argument("--kind must be morphological or diffusion");
    CsvSink csv(o.output);
    if (csv.to_stdout()) rep.text = &std::cerr;
    csv.row({"i", "j", "k", "x", "y", "theta", "rho", "value"});
    double mass = 0.0, vmin = std::numeric_limits<double>::infinity(), vmax = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < st.size(); ++q) {
        const auto& off = st.offsets[q];
        csv.row({I(off.i), I(off.j), I(off.k), F(off.q.x), F(off.q.y), F(off.q.theta), F(st.rho[q]), F(st.values[q])});
        mass += st.values[q] * st.cell_volume;
        vmin = std::min(vmin, st.values[q]);
        vmax = std::max(vmax, st.values[q]);
    }
    rep.summary.update(json{{"kind", o.kind},
                        {"metric", o.metric.to_json()},
                        {"t", o.t},
                        {"alpha", o.alpha},
                        {"orientations", o.orientations},
                        {"radii", {st.radii.rx, st.radii.ry, st.radii.rtheta}},
                        {"offsets", st.size()},
                        {"center_value", st.values[st.center_index()]},
                        {"min", vmin},
                        {"max", vmax}});
    if (o.kind == "diffusion") rep.summary["mass"] = mass;
    rep.line(o.kind + " kernel: " + I(static_cast<long>(st.size())) + " offsets, center value " +
             F(st.values[st.center_index()]) + ", range [" + F(vmin) + ", " + F(vmax) + "]");
}

// distance / compare-distance ------------------------------------------------

struct GridOpts {
    int half_width = 24;
    int orientations = 16;
    double h = 1.0;

    oracle::OracleGrid grid() const {
        oracle::OracleGrid g{half_width, orientations, h};
        g.validate();
        return g;
    }
};

void add_grid(CLI::App* app, GridOpts& g) {
    app->add_option("--half-width", g.half_width, "grid nodes per side of the origin")->capture_default_str();
    app->add_option("--orientations", g.orientations, "orientation samples")->capture_default_str();
    app->add_option("--spacing", g.h, "spatial grid spacing")->capture_default_str();
}

struct DistanceOpts {
    MetricOpts metric;
    GridOpts grid;
    double tolerance = 1e-6;
    int max_sweeps = 4000;
    bool unfactored = false;
    std::string output;  // LTF field
    std::string csv;     // compare-distance report
    double window = 12.0;
    double window_theta = 0.75 * kPi;
};

oracle::DistanceField solve_distance(const DistanceOpts& o, Report& rep) {
    oracle::EikonalOptions eo;
    eo.tolerance = o.tolerance;
    eo.max_sweeps = o.max_sweeps;
    eo.factored = !o.unfactored;
    const auto g = o.grid.grid();
    auto d = oracle::eikonal_distance(o.metric.params(), g, eo);
    rep.summary.update(json{{"metric", o.metric.to_json()},
                        {"grid", {{"half_width", g.half_width}, {"orientations", g.orientations}, {"h", g.h}}},
                        {"factored", eo.factored},
                        {"sweeps", d.sweeps},
                        {"residual", d.residual},
                        {"converged", d.converged},
                        {"eps_disc", oracle::discretization_tolerance(o.metric.params(), g)}});
    rep.line("eikonal: " + I(d.sweeps) + " sweeps, final change " + F(d.residual) +
             (d.converged ? ", converged" : ", NOT converged"));
    if (!o.output.empty()) {
        const std::uint32_t dims[3] = {static_cast<std::uint32_t>(g.orientations), static_cast<std::uint32_t>(g.size()),
                                       static_cast<std::uint32_t>(g.size())};
        write_ltf(o.output, dims, d.values);
        rep.summary["output"] = o.output;
    }
    return d;
}

void cmd_distance(const DistanceOpts& o, Report& rep) {
    const auto d = solve_distance(o, rep);
    if (!d.converged) throw NumericalFailure("eikonal solver did not converge within " + I(o.max_sweeps) + " sweeps");
}

void cmd_compare_distance(const DistanceOpts& o, Report& rep) {
    const auto d = solve_distance(o, rep);
    if (!d.converged) throw NumericalFailure("eikonal solver did not converge within " + I(o.max_sweeps) + " sweeps");
    const MetricParams m = o.metric.params();
    const auto rs = oracle::metric_sandwich(m, d, o.window, o.window_theta);
    CsvSink csv(o.csv);
    if (csv.to_stdout()) rep.text = &std::cerr;
    csv.row({"x", "y", "theta", "d_exact", "rho", "ratio"});
    const auto& g = d.grid;
    for (int k = 0; k < g.orientations; ++k)
        for (int j = 0; j < g.size(); ++j)
            for (int i = 0; i < g.size(); ++i) {
                const double x = g.coord(i), y = g.coord(j), th = wrap_angle(k * g.dtheta());
                if (std::max(std::abs(x), std::abs(y)) > o.window + 1e-9 || std::abs(th) > o.window_theta + 1e-9) continue;
                if (i == g.half_width && j == g.half_width && k == 0) continue;
                const double de = d.at(i, j, k), r = rho({x, y, th}, m);
                csv.row({F(x), F(y), F(th), F(de), F(r), F(r / de)});
            }
    rep.summary.update(json{{"window", o.window},
                        {"window_theta", o.window_theta},
                        {"nodes", rs.nodes},
                        {"violations", rs.violations},
                        {"min_margin", rs.min_margin},
                        {"max_ratio", rs.max_ratio},
                        {"min_ratio", rs.min_ratio}});
    rep.line("sandwich: " + I(rs.nodes) + " nodes, " + I(rs.violations) + " with rho < d - eps (eps = " +
             F(rs.eps_disc) + "), ratio rho/d in [" + F(rs.min_ratio) + ", " + F(rs.max_ratio) + "]");
}

// compare-heat ----------------------------------------------------------------

struct HeatOpts {
    MetricOpts metric;
    double t = 1.0;
    int orientations = 16;
    std::vector<int> radii{3, 3, 8};
    int refine = 2;
    int half_width = 12;
    std::string output;
};

void cmd_compare_heat(const HeatOpts& o, Report& rep) {
    if (!(o.t > 0.0)) throw std::invalid_argument("--t must be > 0");
    const auto c = oracle::compare_heat_kernel(o.metric.params(), o.t, o.orientations, make_radii(o.radii), o.refine,
                                               o.half_width);
    CsvSink csv(o.output);
    if (csv.to_stdout()) rep.text = &std::cerr;
    csv.row({"i", "j", "k", "x", "y", "theta", "rho", "oracle", "approx"});
    for (std::size_t q = 0; q < c.stencil.size(); ++q) {
        const auto& off = c.stencil.offsets[q];
        csv.row({I(off.i), I(off.j), I(off.k), F(off.q.x), F(off.q.y), F(off.q.theta), F(c.stencil.rho[q]),
                 F(c.oracle[q]), F(c.stencil.values[q])});
    }
    rep.summary.update(json{{"metric", o.metric.to_json()},
                        {"t", o.t},
                        {"orientations", o.orientations},
                        {"radii", {c.stencil.radii.rx, c.stencil.radii.ry, c.stencil.radii.rtheta}},
                        {"refine", c.refine},
                        {"steps", c.steps},
                        {"relative_l1", c.relative_l1},
                        {"mass_error", c.mass_error},
                        {"oracle_mass_in_stencil", c.oracle_mass_in_stencil}});
    rep.line("heat kernel: relative L1 " + F(c.relative_l1) + ", oracle mass error " + F(c.mass_error) + " after " +
             I(c.steps) + " steps");
    require_finite(c.relative_l1, "relative L1 error");
    if (c.mass_error > 1e-8) throw NumericalFailure("heat oracle lost mass: " + F(c.mass_error));
}

// semigroup -------------------------------------------------------------------

struct SemigroupOpts {
    MetricOpts metric;
    double alpha = 1.0, t = 1.0, s = 1.0;
    GridOpts grid{6, 16, 1.0};
    double window = 3.0, window_theta = 0.5 * kPi;
    int eikonal_refine = 1;
    bool one_d = false;
};

void cmd_semigroup(const SemigroupOpts& o, Report& rep) {
    if (!(o.t >= 0.0 && o.s >= 0.0)) throw std::invalid_argument("--t and --s must be >= 0");
    const auto r = o.one_d ? oracle::semigroup_residual_1d(o.alpha, o.t, o.s, o.grid.h, o.grid.half_width)
                           : oracle::semigroup_residual(o.metric.params(), o.alpha, o.t, o.s, o.grid.grid(), o.window,
                                                        o.window_theta, o.eikonal_refine);
    const double rel = r.kernel_range > 0.0 ? r.residual / r.kernel_range : 0.0;
    rep.summary.update(json{{"mode", o.one_d ? "1d" : "m2"},
                        {"alpha", o.alpha},
                        {"t", o.t},
                        {"s", o.s},
                        {"h", r.h},
                        {"residual", r.residual},
                        {"kernel_range", r.kernel_range},
                        {"relative_residual", rel},
                        {"window_nodes", r.window_nodes}});
    if (!o.one_d) rep.summary["metric"] = o.metric.to_json();
    rep.line("semigroup: max residual " + F(r.residual) + " over " + I(r.window_nodes) + " nodes (kernel range " +
             F(r.kernel_range) + ", relative " + F(rel) + ")");
    require_finite(r.residual, "semigroup residual");
}

// equivariance ------------------------------------------------------------------

struct EquivOpts {
    std::uint64_t seed = 7;
    int seeds = 1;
    EquivarianceOptions pipeline;
    double tolerance = 1e-5;
};

void cmd_equivariance(const EquivOpts& o, Report& rep) {
    if (o.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
    double worst = 0.0, rot = 0.0, tr = 0.0;
    for (int i = 0; i < o.seeds; ++i) {
        const auto r = pipeline_equivariance(o.seed + i, o.pipeline);
        rep.line("seed " + std::to_string(o.seed + i) + ": rotation " + F(r.rotation_deviation) + ", translation (" +
                 I(r.dx) + "," + I(r.dy) + ") " + F(r.translation_deviation) + ", interior margin " +
                 I(r.interior_margin));
        worst = std::max(worst, r.max_deviation);
        rot = std::max(rot, r.rotation_deviation);
        tr = std::max(tr, r.translation_deviation);
    }
    rep.summary.update(json{{"seed", o.seed},
                        {"seeds", o.seeds},
                        {"size", o.pipeline.size},
                        {"orientations", o.pipeline.orientations},
                        {"layers", o.pipeline.layers},
                        {"channels", o.pipeline.channels},
                        {"rotation_deviation", rot},
                        {"translation_deviation", tr},
                        {"max_deviation", worst},
                        {"tolerance", o.tolerance},
                        {"pass", worst <= o.tolerance}});
    rep.line("max deviation " + F(worst) + (worst <= o.tolerance ? " <= " : " > ") + F(o.tolerance));
    require_finite(worst, "equivariance deviation");
    if (worst > o.tolerance) throw NumericalFailure("equivariance deviation exceeds tolerance");
}

// layer-apply -------------------------------------------------------------------

struct LayerOpts {
    std::string input, spec, output;
};

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot read " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

void cmd_layer_apply(const LayerOpts& o, Report& rep) {
    const CDELayerSpec spec = layer_spec_from_json(load_json_file(o.spec));
    const M2FeatureMap in = read_feature_map(o.input);
    if (in.channels() != spec.in_channels())
        throw std::invalid_argument("input has " + I(in.channels()) + " channels, the layer expects " +
                                    I(spec.in_channels()));
    const M2FeatureMap out = cde_layer_forward(in, spec);
    double vmin = std::numeric_limits<double>::infinity(), vmax = -std::numeric_limits<double>::infinity();
    for (double v : out.data()) {
        require_finite(v, "layer output");
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    write_feature_map(o.output, out);
    const M2Grid& g = out.grid();
    rep.summary.update(json{{"input", o.input},
                        {"output", o.output},
                        {"grid", {g.width, g.height, g.orientations}},
                        {"in_channels", spec.in_channels()},
                        {"out_channels", spec.out_channels()},
                        {"parameters", spec.parameter_count()},
                        {"min", vmin},
                        {"max", vmax}});
    rep.line("layer applied: " + I(spec.in_channels()) + " -> " + I(spec.out_channels()) + " channels, output range [" +
             F(vmin) + ", " + F(vmax) + "]");
}

// train / infer -------------------------------------------------------------------

struct TrainOpts {
    std::string config, data, test_data, checkpoint, metrics;
    int synthetic = 0, test_size = -1, image_size = 0;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr, weight_decay;
    std::optional<std::uint64_t> seed;
};

std::vector<Sample> synthetic(TaskKind task, int n, int size, std::uint64_t seed) {
    return task == TaskKind::classification ? make_bar_dataset(n, size, seed) : make_curve_dataset(n, size, seed);
}

void cmd_train(const TrainOpts& o, Report& rep) {
    json cfg = o.config.empty() ? json::object() : load_json_file(o.config);
    check_keys(cfg, {"model", "seed", "lr", "epochs", "batch_size", "weight_decay"}, "training config");
    const ModelConfig mc = ModelConfig::from_json(cfg.value("model", json::object()));
    TrainConfig tc;
    tc.seed = o.seed.value_or(cfg.value("seed", tc.seed));
    tc.epochs = o.epochs.value_or(cfg.value("epochs", tc.epochs));
    tc.batch_size = o.batch_size.value_or(cfg.value("batch_size", tc.batch_size));
    tc.adam.lr = o.lr.value_or(cfg.value("lr", tc.adam.lr));
    tc.adam.weight_decay = o.weight_decay.value_or(cfg.value("weight_decay", tc.adam.weight_decay));

    std::vector<Sample> train, test;
    std::string source;
    if (!o.data.empty()) {
        if (o.synthetic > 0) throw std::invalid_argument("use either --data or --synthetic, not both");
        const fs::path root(o.data);
        if (fs::is_directory(root / "train")) {
            train = load_dataset_dir(root / "train");
            if (fs::is_directory(root / "test")) test = load_dataset_dir(root / "test");
        } else {
            train = load_dataset_dir(root);
        }
        if (!o.test_data.empty()) test = load_dataset_dir(o.test_data);
        source = o.data;
    } else if (o.synthetic > 0) {
        const int size = o.image_size > 0 ? o.image_size : (mc.task == TaskKind::classification ? 16 : 24);
        const int nt = o.test_size >= 0 ? o.test_size : std::max(1, o.synthetic * 2 / 5);
        train = synthetic(mc.task, o.synthetic, size, tc.seed * 2 + 1);
        test = synthetic(mc.task, nt, size, tc.seed * 2 + 2);
        source = mc.task == TaskKind::classification ? "synthetic-bars" : "synthetic-curves";
    } else {
        throw std::invalid_argument("training data required: pass --data DIR or --synthetic N");
    }

    Model model(mc, tc.seed);
    rep.line("model: " + I(model.parameter_count()) + " parameters (" + I(model.pde_parameter_count()) +
             " PDE), " + I(static_cast<long>(train.size())) + " train / " + I(static_cast<long>(test.size())) +
             " test samples");
    const std::string metrics_path = o.metrics.empty() ? (fs::path(o.checkpoint) / "metrics.csv").string() : o.metrics;
    fs::create_directories(o.checkpoint);
    CsvSink csv(metrics_path);
    csv.row({"epoch", "train_loss", "train_metric", "test_loss", "test_metric"});
    const bool classify = mc.task == TaskKind::classification;
    const auto res = train_model(model, train, test, tc, [&](const EpochMetrics& m) {
        csv.row({I(m.epoch), F(m.train_loss), F(m.train_metric), F(m.test_loss), F(m.test_metric)});
        csv.os->flush();
        rep.line("epoch " + I(m.epoch) + ": train loss " + F(m.train_loss) + ", test loss " + F(m.test_loss) +
                 (classify ? ", test accuracy " : ", test DICE loss ") + F(m.test_metric) + " (" + F(m.seconds) + " s)");
    });
    json history = json::array();
    for (const auto& m : res.history)
        history.push_back({{"epoch", m.epoch},
                           {"train_loss", m.train_loss},
                           {"train_metric", m.train_metric},
                           {"test_loss", m.test_loss},
                           {"test_metric", m.test_metric}});
    rep.summary.update(json{{"task", classify ? "classification" : "segmentation"},
                        {"data", source},
                        {"seed", tc.seed},
                        {"epochs", tc.epochs},
                        {"batch_size", tc.batch_size},
                        {"lr", tc.adam.lr},
                        {"weight_decay", tc.adam.weight_decay},
                        {"parameters", model.parameter_count()},
                        {"pde_parameters", model.pde_parameter_count()},
                        {"metric_name", classify ? "accuracy" : "dice_loss"},
                        {"history", history},
                        {"diverged", res.diverged},
                        {"checkpoint", o.checkpoint},
                        {"metrics", metrics_path}});
    if (res.diverged) throw NumericalFailure("training diverged: " + res.message);
    save_checkpoint(o.checkpoint, model, {{"seed", tc.seed}, {"epochs", tc.epochs}, {"data", source}});
    rep.line("checkpoint written to " + o.checkpoint);
}

struct InferOpts {
    std::string checkpoint, input, data, output;
};

void write_any_image(const std::string& path, const Image2D& img) {
    if (fs::path(path).extension() == ".pgm")
        write_pgm(path, img);
    else
        write_image(path, img);
}

void cmd_infer(const InferOpts& o, Report& rep) {
    if (o.input.empty() == o.data.empty()) throw std::invalid_argument("pass exactly one of --input FILE or --data DIR");
    const Model model = load_checkpoint(o.checkpoint);
    const bool classify = model.config().task == TaskKind::classification;
    rep.summary["checkpoint"] = o.checkpoint;
    if (!o.input.empty()) {
        const Image2D img = load_image_any(o.input);
        const auto out = model.forward(img);
        for (double v : out) require_finite(v, "model output");
        rep.summary["input"] = o.input;
        if (classify) {
            const int pred = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
            rep.summary.update(json{{"prediction", pred}, {"logits", out}});
            std::string logits;
            for (double v : out) logits += (logits.empty() ? "" : " ") + F(v);
            rep.line("class " + I(pred) + " (logits " + logits + ")");
        } else {
            Image2D prob(img.width(), img.height(), 1);
            prob.data() = out;
            double fg = 0.0;
            for (double v : out) fg += v >= 0.5 ? 1.0 : 0.0;
            rep.summary["foreground_fraction"] = fg / static_cast<double>(out.size());
            if (!o.output.empty()) {
                write_any_image(o.output, prob);
                rep.summary["output"] = o.output;
            }
            rep.line("segmentation: " + F(100.0 * fg / static_cast<double>(out.size())) + "% of pixels above 0.5");
        }
        return;
    }
    const auto data = load_dataset_dir(o.data);
    const Evaluation ev = evaluate(model, data);
    require_finite(ev.loss, "evaluation loss");
    rep.summary.update(json{{"data", o.data},
                        {"samples", data.size()},
                        {"loss", ev.loss},
                        {"metric_name", classify ? "accuracy" : "dice_loss"},
                        {"metric", ev.metric}});
    rep.line(I(static_cast<long>(data.size())) + " samples: loss " + F(ev.loss) +
             (classify ? ", accuracy " : ", DICE loss ") + F(ev.metric));
}

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("LIETORCH_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw std::invalid_argument("LIETORCH_THREADS must be a positive integer");
        return static_cast<int>(v);
    }
    return 1;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"PDE-based roto-translation equivariant networks on M2 = SE(2)", "lietorch"};
    app.require_subcommand(1);
    app.fallthrough();
    int threads = 0;
    std::string summary_path;
    app.add_option("--threads", threads, "worker threads (default: LIETORCH_THREADS or 1)")->check(CLI::PositiveNumber);
    app.add_option("--summary", summary_path, "write the JSON summary here instead of stdout");

    KernelOpts ko;
    auto* kernel = app.add_subcommand("kernel", "sample a kernel stencil as CSV");
    kernel->add_option("--kind", ko.kind, "morphological or diffusion")->capture_default_str();
    add_metric(kernel, ko.metric);
    kernel->add_option("--t", ko.t, "time")->capture_default_str();
    kernel->add_option("--alpha", ko.alpha, "morphological exponent in [1/2, 1]")->capture_default_str();
    kernel->add_option("--orientations", ko.orientations)->capture_default_str();
    kernel->add_option("--radii", ko.radii, "rx,ry,rtheta (rtheta < 0: half the orientations)")
        ->expected(3)
        ->delimiter(',');
    kernel->add_option("--output", ko.output, "CSV path (default stdout)");

    DistanceOpts dist_o;
    auto* distance = app.add_subcommand("distance", "Eikonal distance field as LTF");
    add_metric(distance, dist_o.metric);
    add_grid(distance, dist_o.grid);
    distance->add_option("--tolerance", dist_o.tolerance)->capture_default_str();
    distance->add_option("--max-sweeps", dist_o.max_sweeps)->capture_default_str();
    distance->add_flag("--unfactored", dist_o.unfactored, "plain upwind scheme without the point-source factor");
    distance->add_option("--output", dist_o.output, "LTF path, dims (K, N, N)")->required();

    DistanceOpts cmp_o;
    auto* cmpdist = app.add_subcommand("compare-distance", "Eikonal distance vs rho as CSV");
    add_metric(cmpdist, cmp_o.metric);
    add_grid(cmpdist, cmp_o.grid);
    cmpdist->add_option("--tolerance", cmp_o.tolerance)->capture_default_str();
    cmpdist->add_option("--max-sweeps", cmp_o.max_sweeps)->capture_default_str();
    cmpdist->add_flag("--unfactored", cmp_o.unfactored);
    cmpdist->add_option("--window", cmp_o.window, "spatial window max(|x|,|y|)")->capture_default_str();
    cmpdist->add_option("--window-theta", cmp_o.window_theta, "angular window |theta|")->capture_default_str();
    cmpdist->add_option("--output", cmp_o.csv, "CSV path (default stdout)");
    cmpdist->add_option("--field", cmp_o.output, "also write the distance field as LTF");

    HeatOpts heat_o;
    auto* heat = app.add_subcommand("compare-heat", "finite-difference heat kernel vs sampled diffusion kernel");
    add_metric(heat, heat_o.metric);
    heat->add_option("--t", heat_o.t)->capture_default_str();
    heat->add_option("--orientations", heat_o.orientations)->capture_default_str();
    heat->add_option("--radii", heat_o.radii, "rx,ry,rtheta")->expected(3)->delimiter(',');
    heat->add_option("--refine", heat_o.refine, "oracle grid refinement")->capture_default_str();
    heat->add_option("--half-width", heat_o.half_width, "oracle half width in coarse cells")->capture_default_str();
    heat->add_option("--output", heat_o.output, "CSV path (default stdout)");

    SemigroupOpts sg_o;
    auto* semigroup = app.add_subcommand("semigroup", "morphological semigroup residual");
    add_metric(semigroup, sg_o.metric);
    add_grid(semigroup, sg_o.grid);
    semigroup->add_option("--alpha", sg_o.alpha)->capture_default_str();
    semigroup->add_option("--t", sg_o.t)->capture_default_str();
    semigroup->add_option("--s", sg_o.s)->capture_default_str();
    semigroup->add_option("--window", sg_o.window)->capture_default_str();
    semigroup->add_option("--window-theta", sg_o.window_theta)->capture_default_str();
    semigroup->add_option("--eikonal-refine", sg_o.eikonal_refine)->capture_default_str();
    semigroup->add_flag("--one-d", sg_o.one_d, "degenerate check on the real line");

    EquivOpts eq_o;
    auto* equiv = app.add_subcommand("equivariance", "full-pipeline rotation/translation check");
    equiv->add_option("--seed", eq_o.seed)->capture_default_str();
    equiv->add_option("--seeds", eq_o.seeds, "number of consecutive seeds")->capture_default_str();
    equiv->add_option("--size", eq_o.pipeline.size)->capture_default_str();
    equiv->add_option("--orientations", eq_o.pipeline.orientations)->capture_default_str();
    equiv->add_option("--layers", eq_o.pipeline.layers)->capture_default_str();
    equiv->add_option("--channels", eq_o.pipeline.channels)->capture_default_str();
    equiv->add_option("--tolerance", eq_o.tolerance)->capture_default_str();

    LayerOpts lay_o;
    auto* layer = app.add_subcommand("layer-apply", "apply one CDE layer to an LTF feature map");
    layer->add_option("--input", lay_o.input, "LTF feature map")->required();
    layer->add_option("--spec", lay_o.spec, "JSON layer spec")->required();
    layer->add_option("--output", lay_o.output, "LTF output path")->required();

    TrainOpts tr_o;
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    train->add_option("--config", tr_o.config, "JSON training config");
    train->add_option("--data", tr_o.data, "dataset directory");
    train->add_option("--test-data", tr_o.test_data, "separate test directory");
    train->add_option("--synthetic", tr_o.synthetic, "generate N synthetic training samples");
    train->add_option("--test-size", tr_o.test_size, "synthetic test samples (default 2N/5)");
    train->add_option("--image-size", tr_o.image_size, "synthetic image side");
    train->add_option("--checkpoint", tr_o.checkpoint, "checkpoint directory")->required();
    train->add_option("--metrics", tr_o.metrics, "per-epoch CSV (default <checkpoint>/metrics.csv)");
    train->add_option("--epochs", tr_o.epochs);
    train->add_option("--batch-size", tr_o.batch_size);
    train->add_option("--lr", tr_o.lr);
    train->add_option("--weight-decay", tr_o.weight_decay);
    train->add_option("--seed", tr_o.seed);

    InferOpts in_o;
    auto* infer = app.add_subcommand("infer", "run a checkpoint on an image or a dataset directory");
    infer->add_option("--checkpoint", in_o.checkpoint)->required();
    infer->add_option("--input", in_o.input, "image (PGM or LTF)");
    infer->add_option("--data", in_o.data, "dataset directory to evaluate");
    infer->add_option("--output", in_o.output, "segmentation probability map (.pgm or .ltf)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const std::vector<std::pair<CLI::App*, std::function<void(Report&)>>> commands = {
        {kernel, [&](Report& r) { cmd_kernel(ko, r); }},
        {distance, [&](Report& r) { cmd_distance(dist_o, r); }},
        {cmpdist, [&](Report& r) { cmd_compare_distance(cmp_o, r); }},
        {heat, [&](Report& r) { cmd_compare_heat(heat_o, r); }},
        {semigroup, [&](Report& r) { cmd_semigroup(sg_o, r); }},
        {equiv, [&](Report& r) { cmd_equivariance(eq_o, r); }},
        {layer, [&](Report& r) { cmd_layer_apply(lay_o, r); }},
        {train, [&](Report& r) { cmd_train(tr_o, r); }},
        {infer, [&](Report& r) { cmd_infer(in_o, r); }},
    };

    Report rep;
    int code = 0;
    for (const auto& [sub, fn] : commands) {
        if (!sub->parsed()) continue;
        rep.summary = {{"subcommand", sub->get_name()}, {"status", "ok"}};
        try {
            set_num_threads(resolve_threads(threads));
            fn(rep);
        } catch (const NumericalFailure& e) {
            std::cerr << "numerical failure: " << e.what() << '\n';
            rep.summary["status"] = "numerical_failure";
            rep.summary["error"] = e.what();
            code = 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 1;
        }
    }
    if (summary_path.empty()) {
        *rep.text << rep.summary.dump() << '\n';
    } else {
        std::ofstream os(summary_path);
        if (!os) {
            std::cerr << "error: cannot write " << summary_path << '\n';
            return 1;
        }
        os << rep.summary.dump(2) << '\n';
    }
    return code;
}

}  // namespace lietorch::cli
