#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajlens/tensor.hpp"

namespace trajlens {

enum class ActivationKind { sigmoid, tanh_act, relu, leaky_relu };
enum class LossKind { cross_entropy_softmax, mse };
enum class Mode { train, eval };

const char* to_string(ActivationKind kind);
const char* to_string(LossKind kind);
ActivationKind activation_from_string(const std::string& name);
LossKind loss_from_string(const std::string& name);

/// One layer of the network. The kind decides which fields are meaningful.
struct LayerSpec {
    enum class Kind { dense, conv2d, batch_norm, activation, flatten };

    Kind kind = Kind::dense;

    // dense
    std::size_t in = 0;
    std::size_t out = 0;

    // conv2d (square kernels)
    std::size_t cin = 0;
    std::size_t cout = 0;
    std::size_t ksize = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;

    // batch_norm
    std::size_t features = 0;
    double eps = 1e-5;
    double momentum = 0.1;

    // activation
    ActivationKind act = ActivationKind::relu;
    double slope = 1e-2;  // leaky_relu only, must lie in (0, 1)

    static LayerSpec dense_layer(std::size_t in, std::size_t out);
    static LayerSpec conv_layer(std::size_t cin, std::size_t cout, std::size_t ksize,
                                std::size_t stride = 1, std::size_t pad = 0);
    static LayerSpec batch_norm_layer(std::size_t features, double eps = 1e-5,
                                      double momentum = 0.1);
    static LayerSpec activation_layer(ActivationKind kind, double slope = 1e-2);
    static LayerSpec flatten_layer();
};

/// Additive connection: the tensor flowing *into* layer `from` is added to
/// the output of layer `to` (from <= to, so the graph stays acyclic and the
/// layer order is already topological). When `projected` is set, a learned
/// linear map (1x1 conv for rank-4 tensors) adapts the feature count.
struct SkipEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    bool projected = false;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<SkipEdge> skip_edges;
    LossKind loss = LossKind::cross_entropy_softmax;
    std::vector<std::size_t> input_shape;  // per-sample shape, e.g. {2} or {C,H,W}

    /// Per-sample activation shapes: result[0] is the input shape, result[i+1]
    /// the output shape of layer i. Throws DimensionError on any mismatch,
    /// including skip edges that join incompatible shapes without projection.
    std::vector<std::vector<std::size_t>> infer_shapes() const;

    void validate() const;
};

/// One named slice of the flattened parameter vector.
struct ParamSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::vector<std::size_t> shape;
};

/// Ordered segment table covering [0, dim) with no gaps. Two specs that
/// differ only in seeds or activation kinds share an identical layout.
struct ParamLayout {
    std::vector<ParamSegment> segments;
    std::size_t dim = 0;

    const ParamSegment& find(const std::string& name) const;
};

ParamLayout build_layout(const NetworkSpec& spec);

/// Flattened model parameters, the coordinate system of the optimization
/// trajectory.
struct ParamVector {
    std::vector<double> values;
    std::shared_ptr<const ParamLayout> layout;

    std::size_t dim() const { return values.size(); }
    std::span<double> segment(const std::string& name);
    std::span<const double> segment(const std::string& name) const;
};

ParamVector zeros_like(const ParamVector& other);

/// Deterministic initialization: dense/conv/projection weights uniform in
/// (-sqrt(1/fan_in), +sqrt(1/fan_in)), biases 0, batch-norm scale 1 shift 0.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Structured view of a ParamVector: one tensor per layout segment, in
/// layout order. flatten(spec, unflatten(p)) == p bit-exactly.
std::vector<Tensor> unflatten(const ParamVector& params);
ParamVector flatten(const NetworkSpec& spec, const std::vector<Tensor>& tensors);

/// Mini-batch: a fixed slice of the dataset, z_xi of the update rule.
struct Batch {
    Tensor inputs;   // [B x ...]
    Tensor targets;  // [B] class ids or [B x K] regression targets
    std::size_t index = 0;

    std::size_t batch_size() const { return inputs.extent(0); }
};

/// Per-layer running mean/variance for batch-norm eval mode. Owned by the
/// caller; forward(train) updates it when supplied.
struct RunningStats {
    std::vector<Tensor> mean;  // indexed by layer, empty tensor when not BN
    std::vector<Tensor> var;

    static RunningStats for_spec(const NetworkSpec& spec);
    bool empty() const { return mean.empty(); }
};

/// Everything backward needs: activations (post skip-merge), batch-norm
/// intermediates, and the batch itself.
struct ForwardCache {
    std::vector<Tensor> acts;  // acts[0] = batch inputs, acts[i+1] = layer i output
    struct BnAux {
        Tensor xhat;
        std::vector<double> inv_std;
    };
    std::vector<BnAux> bn_aux;  // indexed by layer
    Batch batch;
    Mode mode = Mode::train;
    double loss = 0.0;
};

/// Mean per-sample loss over the batch. Train mode normalizes with batch
/// statistics; eval mode requires running stats. A non-finite loss throws
/// DivergenceError. `cache` and `stats` may be null.
double forward(const NetworkSpec& spec, const ParamVector& params, const Batch& batch,
               Mode mode, ForwardCache* cache = nullptr, RunningStats* stats = nullptr);

/// Exact reverse-mode gradient of the batch-mean loss with respect to every
/// parameter, from a train-mode forward cache.
ParamVector backward(const NetworkSpec& spec, const ParamVector& params,
                     const ForwardCache& cache);

/// Standalone batch-norm forward used by the layer implementation and
/// directly testable. x is [B x F] (per feature) or [B x C x H x W] (per
/// channel). Train mode requires B >= 2 and uses biased variance.
Tensor batch_norm_forward(const Tensor& x, std::span<const double> scale_param,
                          std::span<const double> shift, double eps, Mode mode,
                          Tensor* running_mean = nullptr, Tensor* running_var = nullptr,
                          double momentum = 0.1, ForwardCache::BnAux* aux = nullptr);

}  // namespace trajlens
