#include "lietorch/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lietorch/io.hpp"

namespace lietorch {

// ---------------------------------------------------------------- parameters

std::size_t ParameterSet::add(const std::string& name, std::size_t n, double init) {
    const std::size_t off = values.size();
    for (std::size_t i = 0; i < n; ++i) names.push_back(n == 1 ? name : name + "[" + std::to_string(i) + "]");
    values.resize(off + n, init);
    grads.resize(off + n, 0.0);
    return off;
}

void ParameterSet::zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

Adam::Adam(const AdamConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {
    if (!(cfg.lr >= 0.0)) throw std::invalid_argument("adam: learning rate must be >= 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw std::invalid_argument("adam: betas must lie in [0, 1)");
    if (!(cfg.eps > 0.0)) throw std::invalid_argument("adam: eps must be > 0");
    if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("adam: weight decay must be >= 0");
}

void Adam::step(ParameterSet& params) {
    if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const double g = params.grads[i] + cfg_.weight_decay * params.values[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m_[i] / bc1, vh = v_[i] / bc2;
        params.values[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
}

// -------------------------------------------------------------------- losses

double dice_loss(std::span<const double> a, std::span<const double> b, double eps, std::vector<double>* grad) {
    if (a.size() != b.size()) throw std::invalid_argument("dice_loss: shapes differ");
    if (!(eps > 0.0)) throw std::invalid_argument("dice_loss: eps must be > 0");
    double ab = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        sa += a[i];
        sb += b[i];
    }
    const double num = 2.0 * ab + eps, den = sa + sb + eps;
    if (grad) {
        grad->resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) (*grad)[i] = -(2.0 * b[i] * den - num) / (den * den);
    }
    return 1.0 - num / den;
}

double softmax_cross_entropy(std::span<const double> logits, int label, std::vector<double>* grad) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);
    if (grad) {
        grad->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
        (*grad)[label] -= 1.0;
    }
    return lse - logits[label];
}

// --------------------------------------------------------------------- model

namespace {

TaskKind parse_task(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "segmentation") return TaskKind::segmentation;
    throw std::invalid_argument("unknown task '" + s + "' (expected classification or segmentation)");
}

const char* task_name(TaskKind t) { return t == TaskKind::classification ? "classification" : "segmentation"; }

}  // namespace

void ModelConfig::validate() const {
    if (in_channels < 1) throw std::invalid_argument("model: in_channels must be >= 1");
    if (orientations < 4 || orientations % 4 != 0)
        throw std::invalid_argument("model: orientations must be a positive multiple of 4");
    if (lift_size < 1 || lift_size % 2 == 0) throw std::invalid_argument("model: lift_size must be odd");
    if (lift_channels < 1) throw std::invalid_argument("model: lift_channels must be >= 1");
    if (widths.empty()) throw std::invalid_argument("model: at least one CDE layer is required");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("model: layer widths must be >= 1");
    if (!(alpha > 0.5 && alpha <= 1.0)) throw std::invalid_argument("model: alpha must lie in (1/2, 1]");
    if (!(T > 0.0)) throw std::invalid_argument("model: T must be > 0");
    if (radii.rx < 0 || radii.ry < 0) throw std::invalid_argument("model: radii must be >= 0");
    if (task == TaskKind::classification && classes < 2)
        throw std::invalid_argument("model: classification needs at least 2 classes");
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {"task",  "in_channels", "orientations", "lift_size", "lift_channels",
                                                "widths", "alpha",      "T",            "radii",     "diffusion",
                                                "normalize", "padding", "classes"};
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw std::invalid_argument("model config: unknown key '" + k + "'");
    ModelConfig c;
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    c.in_channels = j.value("in_channels", c.in_channels);
    c.orientations = j.value("orientations", c.orientations);
    c.lift_size = j.value("lift_size", c.lift_size);
    c.lift_channels = j.value("lift_channels", c.lift_channels);
    if (j.contains("widths")) c.widths = j.at("widths").get<std::vector<int>>();
    c.alpha = j.value("alpha", c.alpha);
    c.T = j.value("T", c.T);
    if (j.contains("radii")) {
        const auto r = j.at("radii").get<std::vector<int>>();
        if (r.size() != 3) throw std::invalid_argument("model config: radii must have three entries");
        c.radii = {r[0], r[1], r[2]};
    }
    c.diffusion = j.value("diffusion", c.diffusion);
    c.normalize = j.value("normalize", c.normalize);
    if (j.contains("padding")) c.padding = parse_padding(j.at("padding").get<std::string>());
    c.classes = j.value("classes", c.classes);
    c.validate();
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"task", task_name(task)},
            {"in_channels", in_channels},
            {"orientations", orientations},
            {"lift_size", lift_size},
            {"lift_channels", lift_channels},
            {"widths", widths},
            {"alpha", alpha},
            {"T", T},
            {"radii", {radii.rx, radii.ry, radii.rtheta}},
            {"diffusion", diffusion},
            {"normalize", normalize},
            {"padding", std::string(padding_name(padding))},
            {"classes", classes}};
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    auto normal = [&rng](std::span<double> dst, double sd) {
        std::normal_distribution<double> nd(0.0, sd);
        for (double& v : dst) v = nd(rng);
    };
    auto span_of = [this](std::size_t off, std::size_t n) { return std::span<double>(params_.values.data() + off, n); };

    const std::size_t lift_n =
        static_cast<std::size_t>(cfg_.lift_channels) * cfg_.in_channels * cfg_.lift_size * cfg_.lift_size;
    lift_off_ = params_.add("lift.kernel", lift_n);
    normal(span_of(lift_off_, lift_n), 1.0 / std::sqrt(static_cast<double>(cfg_.lift_size * cfg_.lift_size)));

    int in = cfg_.lift_channels;
    for (std::size_t l = 0; l < cfg_.widths.size(); ++l) {
        const int out = cfg_.widths[l];
        LayerOffsets lo;
        const std::string p = "cde" + std::to_string(l);
        for (int c = 0; c < in; ++c) {
            const std::string q = p + ".ch" + std::to_string(c);
            ChannelOffsets co;
            co.convection = params_.add(q + ".convection", 3);
            normal(span_of(co.convection, 3), 0.3);
            co.dilation = params_.add(q + ".dilation.logw", 3);
            normal(span_of(co.dilation, 3), 0.2);
            co.erosion = params_.add(q + ".erosion.logw", 3);
            normal(span_of(co.erosion, 3), 0.2);
            if (cfg_.diffusion) co.diffusion = params_.add(q + ".diffusion.logw", 3, 0.0);
            lo.channels.push_back(co);
        }
        lo.a = params_.add(p + ".affine.a", static_cast<std::size_t>(out) * in);
        normal(span_of(lo.a, static_cast<std::size_t>(out) * in), 1.0 / std::sqrt(static_cast<double>(in)));
        lo.b = params_.add(p + ".affine.b", out, 0.0);
        layers_.push_back(lo);
        in = out;
    }
    if (cfg_.task == TaskKind::classification) {
        head_w_ = params_.add("head.w", static_cast<std::size_t>(cfg_.classes) * in);
        normal(span_of(head_w_, static_cast<std::size_t>(cfg_.classes) * in), 1.0 / std::sqrt(static_cast<double>(in)));
        head_b_ = params_.add("head.b", cfg_.classes, 0.0);
    } else {
        head_w_ = params_.add("head.w", in);
        normal(span_of(head_w_, in), 1.0 / std::sqrt(static_cast<double>(in)));
        head_b_ = params_.add("head.b", 1, 0.0);
    }
}

int Model::pde_parameter_count() const {
    int n = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) n += layer_spec(static_cast<int>(l)).pde_parameter_count();
    return n;
}

LiftBank Model::lift_bank() const {
    LiftBank bank(cfg_.lift_channels, cfg_.in_channels, cfg_.lift_size, cfg_.orientations);
    bank.set_base({params_.values.data() + lift_off_, bank.base().size()});
    return bank;
}

CDELayerSpec Model::layer_spec(int l) const {
    const LayerOffsets& lo = layers_.at(l);
    const auto& v = params_.values;
    CDELayerSpec spec;
    spec.alpha = cfg_.alpha;
    spec.T = cfg_.T;
    spec.radii = cfg_.radii;
    spec.padding = cfg_.padding;
    for (const auto& co : lo.channels) {
        ChannelPDE ch;
        ch.convection = {v[co.convection], v[co.convection + 1], v[co.convection + 2]};
        ch.dilation = MetricParams::from_log_weights(v[co.dilation], v[co.dilation + 1], v[co.dilation + 2]);
        ch.erosion = MetricParams::from_log_weights(v[co.erosion], v[co.erosion + 1], v[co.erosion + 2]);
        if (cfg_.diffusion)
            ch.diffusion = MetricParams::from_log_weights(v[co.diffusion], v[co.diffusion + 1], v[co.diffusion + 2]);
        spec.channels.push_back(ch);
    }
    const int in = static_cast<int>(lo.channels.size()), out = cfg_.widths[l];
    spec.affine.rows = out;
    spec.affine.cols = in;
    spec.affine.a.assign(v.begin() + lo.a, v.begin() + lo.a + static_cast<std::ptrdiff_t>(out) * in);
    spec.affine.b.assign(v.begin() + lo.b, v.begin() + lo.b + out);
    if (cfg_.normalize) spec.affine.normalize.assign(out, true);
    return spec;
}

std::vector<double> Model::forward(const Image2D& img, Cache* cache) const {
    if (img.channels() != cfg_.in_channels)
        throw std::invalid_argument("model: image has " + std::to_string(img.channels()) + " channels, expected " +
                                    std::to_string(cfg_.in_channels));
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = img;
    c.lifted = lift(img, lift_bank(), cfg_.padding);
    c.activations.clear();
    c.traces.assign(layers_.size(), CDETrace{});
    M2FeatureMap cur = c.lifted;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        M2FeatureMap next = cde_layer_forward(cur, layer_spec(static_cast<int>(l)), &c.traces[l]);
        c.activations.push_back(std::move(cur));
        cur = std::move(next);
    }
    c.projected = project_max(cur, &c.projection_arg);
    c.activations.push_back(std::move(cur));

    const Image2D& P = c.projected;
    const int C = P.channels();
    const std::size_t HW = static_cast<std::size_t>(P.width()) * P.height();
    const auto& v = params_.values;
    if (cfg_.task == TaskKind::classification) {
        c.pooled.assign(C, 0.0);
        c.pool_arg.assign(C, 0);
        for (int ch = 0; ch < C; ++ch) {
            const double* p = P.data().data() + ch * HW;
            const auto it = std::max_element(p, p + HW);
            c.pooled[ch] = *it;
            c.pool_arg[ch] = static_cast<int>(it - p);
        }
        c.output.assign(cfg_.classes, 0.0);
        for (int k = 0; k < cfg_.classes; ++k) {
            double z = v[head_b_ + k];
            for (int ch = 0; ch < C; ++ch) z += v[head_w_ + static_cast<std::size_t>(k) * C + ch] * c.pooled[ch];
            c.output[k] = z;
        }
    } else {
        c.output.assign(HW, v[head_b_]);
        for (int ch = 0; ch < C; ++ch) {
            const double w = v[head_w_ + ch];
            const double* p = P.data().data() + ch * HW;
            for (std::size_t i = 0; i < HW; ++i) c.output[i] += w * p[i];
        }
        for (double& o : c.output) o = 1.0 / (1.0 + std::exp(-o));
    }
    return c.output;
}

void Model::backward(const Cache& c, std::span<const double> gout) {
    if (gout.size() != c.output.size()) throw std::invalid_argument("model backward: gradient size mismatch");
    auto& v = params_.values;
    auto& g = params_.grads;
    const Image2D& P = c.projected;
    const int C = P.channels();
    const std::size_t HW = static_cast<std::size_t>(P.width()) * P.height();
    Image2D gP(P.width(), P.height(), C);
    if (cfg_.task == TaskKind::classification) {
        for (int k = 0; k < cfg_.classes; ++k) {
            g[head_b_ + k] += gout[k];
            for (int ch = 0; ch < C; ++ch) {
                const std::size_t wi = head_w_ + static_cast<std::size_t>(k) * C + ch;
                g[wi] += gout[k] * c.pooled[ch];
                gP.data()[ch * HW + c.pool_arg[ch]] += gout[k] * v[wi];
            }
        }
    } else {
        std::vector<double> gs(HW);
        for (std::size_t i = 0; i < HW; ++i) gs[i] = gout[i] * c.output[i] * (1.0 - c.output[i]);
        double gb = 0.0;
        for (double x : gs) gb += x;
        g[head_b_] += gb;
        for (int ch = 0; ch < C; ++ch) {
            const double* p = P.data().data() + ch * HW;
            double gw = 0.0;
            for (std::size_t i = 0; i < HW; ++i) {
                gw += gs[i] * p[i];
                gP.data()[ch * HW + i] += v[head_w_ + ch] * gs[i];
            }
            g[head_w_ + ch] += gw;
        }
    }

    M2FeatureMap gmap(c.activations.back().grid(), C);
    project_max_backward(c.projection_arg, gP, gmap);
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        const CDELayerSpec spec = layer_spec(l);
        CDELayerGrad lg(spec);
        M2FeatureMap gin = cde_layer_backward(c.activations[l], spec, c.traces[l], gmap, lg);
        const LayerOffsets& lo = layers_[l];
        for (std::size_t ch = 0; ch < lo.channels.size(); ++ch) {
            const auto& co = lo.channels[ch];
            const auto& cg = lg.channels[ch];
            for (int i = 0; i < 3; ++i) {
                g[co.convection + i] += cg.convection[i];
                g[co.dilation + i] += cg.dilation[i];
                g[co.erosion + i] += cg.erosion[i];
                if (cfg_.diffusion) g[co.diffusion + i] += cg.diffusion[i];
            }
        }
        for (std::size_t i = 0; i < lg.a.size(); ++i) g[lo.a + i] += lg.a[i];
        for (std::size_t i = 0; i < lg.b.size(); ++i) g[lo.b + i] += lg.b[i];
        gmap = std::move(gin);
    }
    const LiftBank bank = lift_bank();
    std::vector<double> gbase(bank.base().size(), 0.0);
    lift_backward(c.input, bank, cfg_.padding, gmap, gbase, nullptr);
    for (std::size_t i = 0; i < gbase.size(); ++i) g[lift_off_ + i] += gbase[i];
}

// ------------------------------------------------------------------ datasets

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double l2 = vx * vx + vy * vy;
    double t = l2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / l2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

void draw_bar(Image2D& img, double cx, double cy, double phi, double half_len, double width) {
    const double ax = cx - half_len * std::cos(phi), ay = cy - half_len * std::sin(phi);
    const double bx = cx + half_len * std::cos(phi), by = cy + half_len * std::sin(phi);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const double d = segment_distance(x, y, ax, ay, bx, by);
            img(0, y, x) = std::max(img(0, y, x), std::exp(-d * d / (2.0 * width * width)));
        }
}

}  // namespace

std::vector<Sample> make_bar_dataset(int n, int size, std::uint64_t seed) {
    if (n < 0 || size < 8) throw std::invalid_argument("bar dataset: need n >= 0 and size >= 8");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<Sample> out;
    out.reserve(n);
    const double mid = 0.5 * (size - 1);
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.label = i % 2;
        s.image = Image2D(size, size, 1);
        const double phi1 = kPi * U(rng);
        const double jitter = 1.5;
        const double hl = 0.22 * size * (1.0 + 0.2 * U(rng));
        draw_bar(s.image, mid + jitter * (2 * U(rng) - 1), mid + jitter * (2 * U(rng) - 1), phi1, hl, 0.6);
        // Angular differences avoid a band of pi/16 on both sides of the class boundary pi/4.
        const bool single = s.label == 0 && U(rng) < 0.25;
        if (!single) {
            const double delta = s.label == 0 ? (3.0 * kPi / 16.0) * U(rng) : kPi * (5.0 / 16.0 + (3.0 / 16.0) * U(rng));
            const double phi2 = phi1 + (U(rng) < 0.5 ? delta : -delta);
            const double hl2 = 0.22 * size * (1.0 + 0.2 * U(rng));
            draw_bar(s.image, mid + jitter * (2 * U(rng) - 1), mid + jitter * (2 * U(rng) - 1), phi2, hl2, 0.6);
        }
        for (double& v : s.image.data()) v += noise(rng);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> make_curve_dataset(int n, int size, std::uint64_t seed) {
    if (n < 0 || size < 8) throw std::invalid_argument("curve dataset: need n >= 0 and size >= 8");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.15);
    std::vector<Sample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.image = Image2D(size, size, 1);
        s.mask = Image2D(size, size, 1);
        std::vector<double> dist(static_cast<std::size_t>(size) * size, 1e9);
        // One or two sinusoidal curves, each crossing the whole image at a random angle.
        const int curves = U(rng) < 0.5 ? 1 : 2;
        for (int cidx = 0; cidx < curves; ++cidx) {
            const double phi = kPi * U(rng);
            const double amp = 0.08 * size * U(rng), freq = (0.5 + U(rng)) * kTwoPi / size, ph = kTwoPi * U(rng);
            const double off = 0.3 * size * (2 * U(rng) - 1);
            const double cx = 0.5 * (size - 1), cy = 0.5 * (size - 1);
            const double c = std::cos(phi), sn = std::sin(phi);
            double prev_x = 0, prev_y = 0;
            const int steps = 8 * size;
            for (int st = 0; st <= steps; ++st) {
                const double u = -0.75 * size + 1.5 * size * st / steps;
                const double w = off + amp * std::sin(freq * u + ph);
                const double x = cx + c * u - sn * w, y = cy + sn * u + c * w;
                if (st > 0)
                    for (int py = 0; py < size; ++py)
                        for (int px = 0; px < size; ++px) {
                            double& d = dist[static_cast<std::size_t>(py) * size + px];
                            d = std::min(d, segment_distance(px, py, prev_x, prev_y, x, y));
                        }
                prev_x = x;
                prev_y = y;
            }
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double d = dist[static_cast<std::size_t>(y) * size + x];
                s.image(0, y, x) = 0.8 * std::exp(-d * d / (2.0 * 0.6 * 0.6)) + noise(rng);
                s.mask(0, y, x) = d < 0.75 ? 1.0 : 0.0;
            }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::invalid_argument("dataset directory not found: " + dir.string());
    std::map<std::string, int> labels;
    const fs::path csv = dir / "labels.csv";
    if (fs::exists(csv)) {
        std::ifstream is(csv);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw std::invalid_argument("labels.csv: expected 'name,label' rows");
            const std::string name = line.substr(0, comma), lab = line.substr(comma + 1);
            if (name == "file" || name == "name") continue;
            labels[name] = std::stoi(lab);
        }
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (ext != ".pgm" && ext != ".ltf") continue;
        if (e.path().stem().extension() == ".mask") continue;
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Sample> out;
    for (const auto& f : files) {
        Sample s;
        s.image = load_image_any(f);
        const std::string stem = f.stem().string();
        const fs::path mpgm = dir / (stem + ".mask.pgm"), mltf = dir / (stem + ".mask.ltf");
        if (fs::exists(mpgm) || fs::exists(mltf)) {
            s.mask = load_image_any(fs::exists(mpgm) ? mpgm : mltf);
            for (double& v : s.mask.data()) v = v >= 0.5 ? 1.0 : 0.0;
        } else {
            auto it = labels.find(f.filename().string());
            if (it == labels.end()) it = labels.find(stem);
            if (it == labels.end()) throw std::invalid_argument("no mask or label for " + f.filename().string());
            s.label = it->second;
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw std::invalid_argument("dataset directory contains no images: " + dir.string());
    return out;
}

// ------------------------------------------------------------------ training

double sample_loss(const Model& model, const Sample& s, const std::vector<double>& output, std::vector<double>* gout) {
    if (model.config().task == TaskKind::classification) return softmax_cross_entropy(output, s.label, gout);
    if (s.mask.data().size() != output.size()) throw std::invalid_argument("segmentation sample has no matching mask");
    return dice_loss(output, s.mask.data(), 1e-6, gout);
}

Evaluation evaluate(const Model& model, const std::vector<Sample>& data) {
    Evaluation ev;
    if (data.empty()) return ev;
    for (const auto& s : data) {
        const auto out = model.forward(s.image);
        ev.loss += sample_loss(model, s, out, nullptr);
        if (model.config().task == TaskKind::classification) {
            const int pred = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
            ev.metric += pred == s.label ? 1.0 : 0.0;
        } else {
            ev.metric += dice_loss(out, s.mask.data());
        }
    }
    ev.loss /= static_cast<double>(data.size());
    ev.metric /= static_cast<double>(data.size());
    return ev;
}

TrainResult train_model(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                        const TrainConfig& cfg, const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw std::invalid_argument("train: epochs >= 0 and batch_size >= 1");
    if (train.empty()) throw std::invalid_argument("train: empty training set");
    TrainResult res;
    Adam adam(cfg.adam, model.params().size());
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const bool classify = model.config().task == TaskKind::classification;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, metric_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            model.params().zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = train[order[i]];
                Model::Cache cache;
                const auto out = model.forward(s.image, &cache);
                std::vector<double> gout;
                const double loss = sample_loss(model, s, out, &gout);
                if (!std::isfinite(loss)) {
                    res.diverged = true;
                    res.message = "non-finite loss in epoch " + std::to_string(epoch);
                    return res;
                }
                loss_sum += loss;
                if (classify) {
                    const int pred = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
                    metric_sum += pred == s.label ? 1.0 : 0.0;
                } else {
                    metric_sum += loss;
                }
                model.backward(cache, gout);
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            for (double& g : model.params().grads) {
                g *= scale;
                if (!std::isfinite(g)) {
                    res.diverged = true;
                    res.message = "non-finite gradient in epoch " + std::to_string(epoch);
                    return res;
                }
            }
            adam.step(model.params());
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(train.size());
        m.train_metric = metric_sum / static_cast<double>(train.size());
        const Evaluation ev = evaluate(model, test);
        m.test_loss = ev.loss;
        m.test_metric = ev.metric;
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(m);
        if (on_epoch) on_epoch(m);
        if (!std::isfinite(m.train_loss) || !std::isfinite(m.test_loss)) {
            res.diverged = true;
            res.message = "non-finite loss after epoch " + std::to_string(epoch);
            return res;
        }
    }
    return res;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nlohmann::json& extra) {
    std::filesystem::create_directories(dir);
    const auto& p = model.params();
    const std::uint32_t dims[1] = {static_cast<std::uint32_t>(p.size())};
    write_ltf(dir / "weights.ltf", dims, p.values);
    nlohmann::json manifest = {{"format", "lietorch-checkpoint"},
                               {"version", 1},
                               {"config", model.config().to_json()},
                               {"parameter_count", p.size()},
                               {"pde_parameter_count", model.pde_parameter_count()},
                               {"names", p.names},
                               {"blobs", {{{"file", "weights.ltf"}, {"offset", 0}, {"count", p.size()}}}}};
    if (!extra.is_null()) manifest["extra"] = extra;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::invalid_argument("no manifest.json in " + dir.string());
    const auto manifest = nlohmann::json::parse(is);
    if (manifest.value("format", "") != "lietorch-checkpoint")
        throw std::invalid_argument("not a checkpoint manifest: " + dir.string());
    Model model(ModelConfig::from_json(manifest.at("config")), 0);
    auto& values = model.params().values;
    for (const auto& blob : manifest.at("blobs")) {
        const LtfTensor t = read_ltf(dir / blob.at("file").get<std::string>());
        const std::size_t off = blob.at("offset").get<std::size_t>(), n = blob.at("count").get<std::size_t>();
        if (t.count() != n || off + n > values.size())
            throw std::invalid_argument("checkpoint blob does not match the model layout");
        std::copy(t.values.begin(), t.values.end(), values.begin() + static_cast<std::ptrdiff_t>(off));
    }
    if (manifest.at("parameter_count").get<std::size_t>() != values.size())
        throw std::invalid_argument("checkpoint parameter count does not match its config");
    return model;
}

GradCheckResult gradcheck(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                          std::span<const double> analytic, std::span<const int> indices, double step, double floor) {
    GradCheckResult r;
    std::vector<double> xp(x.begin(), x.end());
    for (int i : indices) {
        const double orig = xp[i];
        xp[i] = orig + step;
        const double fp = f(xp);
        xp[i] = orig - step;
        const double fm = f(xp);
        xp[i] = orig;
        const double fd = (fp - fm) / (2.0 * step);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
        r.max_relative_error = std::max(r.max_relative_error, rel);
        ++r.checked;
    }
    return r;
}

}  // namespace lietorch
