#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lietorch/backward.hpp"
#include "lietorch/field.hpp"
#include "lietorch/lift.hpp"
#include "lietorch/pde_ops.hpp"

namespace lietorch {

/// Flat store of named scalar parameters and their gradient accumulators.
/// Metric weights are stored as log-weights.
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> grads;

    /// Appends n parameters named "<name>[i]" (or "<name>" when n == 1); returns the offset.
    std::size_t add(const std::string& name, std::size_t n, double init = 0.0);
    std::size_t size() const { return values.size(); }
    void zero_grad();
};

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.005;  ///< lambda * value is added to every gradient
};

class Adam {
public:
    Adam(const AdamConfig& cfg, std::size_t n);

    void step(ParameterSet& params);
    long steps() const { return t_; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

/// 1 - (2 sum a b + eps) / (sum a + sum b + eps); grad (optional) receives d/da.
double dice_loss(std::span<const double> a, std::span<const double> b, double eps = 1e-6,
                 std::vector<double>* grad = nullptr);

/// Softmax cross-entropy of integer label; grad (optional) receives d/dlogits.
double softmax_cross_entropy(std::span<const double> logits, int label, std::vector<double>* grad = nullptr);

enum class TaskKind { classification, segmentation };

struct ModelConfig {
    TaskKind task = TaskKind::classification;
    int in_channels = 1;
    int orientations = 8;
    int lift_size = 5;
    int lift_channels = 4;
    std::vector<int> widths{4, 4, 4, 4};  ///< output channels of every CDE layer
    double alpha = 0.65;
    double T = 1.0;
    StencilRadii radii{1, 1, 1};
    bool diffusion = false;
    bool normalize = true;
    Padding padding = Padding::zero;
    int classes = 2;

    void validate() const;
    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// lift -> CDE layers -> max projection -> head. The classification head takes
/// the spatial maximum of every projected channel followed by a linear map to
/// logits; the segmentation head is a per-pixel linear map and a sigmoid.
class Model {
public:
    struct ChannelOffsets {
        std::size_t convection = 0, dilation = 0, erosion = 0, diffusion = 0;
    };
    struct LayerOffsets {
        std::vector<ChannelOffsets> channels;
        std::size_t a = 0, b = 0;
    };

    struct Cache {
        Image2D input;
        M2FeatureMap lifted;
        std::vector<M2FeatureMap> activations;  ///< input of layer l, then the final output
        std::vector<CDETrace> traces;
        Image2D projected;
        std::vector<int> projection_arg;
        std::vector<double> pooled;
        std::vector<int> pool_arg;
        std::vector<double> output;
    };

    Model() = default;
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    int parameter_count() const { return static_cast<int>(params_.size()); }
    /// PDE parameters only: 3 convection + 3 dilation + 3 erosion (+ 3 diffusion) per layer input channel.
    int pde_parameter_count() const;

    LiftBank lift_bank() const;
    CDELayerSpec layer_spec(int l) const;

    /// Logits (classification) or per-pixel probabilities (segmentation, H*W).
    std::vector<double> forward(const Image2D& img, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients for d loss / d output = gout.
    void backward(const Cache& cache, std::span<const double> gout);

private:
    ModelConfig cfg_;
    ParameterSet params_;
    std::size_t lift_off_ = 0;
    std::vector<LayerOffsets> layers_;
    std::size_t head_w_ = 0, head_b_ = 0;
};

struct Sample {
    Image2D image;
    int label = 0;
    Image2D mask;  ///< segmentation target, empty for classification
};

/// Oriented-bar task: one or two bars through the middle of a size x size
/// image; label 1 when the bars' angular difference (mod pi) exceeds pi/4.
std::vector<Sample> make_bar_dataset(int n, int size, std::uint64_t seed);

/// Thin smooth curves in noise with their binary masks.
std::vector<Sample> make_curve_dataset(int n, int size, std::uint64_t seed);

/// Directory dataset: every image X.pgm / X.ltf with a mask X.mask.pgm / X.mask.ltf
/// (segmentation) or a row "X,label" in labels.csv (classification).
std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir);

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    AdamConfig adam;
    std::uint64_t seed = 1;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_metric = 0.0;  ///< accuracy or mean DICE loss
    double test_loss = 0.0;
    double test_metric = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    bool diverged = false;
    std::string message;
};

struct Evaluation {
    double loss = 0.0;
    double metric = 0.0;
};

/// Mean loss and accuracy (classification) or mean DICE loss (segmentation).
Evaluation evaluate(const Model& model, const std::vector<Sample>& data);

/// Loss of one sample; gout (optional) receives d loss / d model output.
double sample_loss(const Model& model, const Sample& s, const std::vector<double>& output, std::vector<double>* gout);

TrainResult train_model(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                        const TrainConfig& cfg, const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Writes manifest.json and weights.ltf into dir.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nlohmann::json& extra = {});
Model load_checkpoint(const std::filesystem::path& dir);

struct GradCheckResult {
    double max_relative_error = 0.0;
    int checked = 0;
};

/// Compares analytic[i] with central differences of f at x for the given indices.
/// Relative error is |a - fd| / max(|a|, |fd|, floor).
GradCheckResult gradcheck(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                          std::span<const double> analytic, std::span<const int> indices, double step = 1e-4,
                          double floor = 1e-6);

}  // namespace lietorch
