// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <lumisel/encoding.h>
#include <lumisel/geometry.h>
#include <lumisel/scene.h>

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lumisel {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Fully connected ReLU network; the last layer is linear. Parameters are owned by
// the caller as one flat array: for each layer, a column-major out x in weight
// matrix followed by the bias vector.
template <typename T>
class Mlp {
  public:
    struct Layer {
        int in = 0, out = 0;
        size_t weightOffset = 0, biasOffset = 0;
    };

    Mlp() = default;
    // widths = {input, hidden..., output}
    explicit Mlp(const std::vector<int> &widths);

    size_t NumParameters() const { return numParameters; }
    std::span<const Layer> Layers() const { return layers; }
    int InputWidth() const { return layers.front().in; }
    int OutputWidth() const { return layers.back().out; }

    // x is in x batch (one sample per column). If activations is given it receives
    // the input followed by each hidden layer's post-ReLU output.
    Matrix<T> Forward(std::span<const T> params, const Matrix<T> &x,
                      std::vector<Matrix<T>> *activations = nullptr) const;

    // Adds dL/dparams to grad given dL/doutput; optionally returns dL/dinput.
    void Backward(std::span<const T> params, const std::vector<Matrix<T>> &activations,
                  Matrix<T> dOut, std::span<double> grad, Matrix<T> *dInput = nullptr) const;

  private:
    std::vector<Layer> layers;
    size_t numParameters = 0;
};

struct NetworkConfig {
    int numOutputs = 1;
    std::vector<int> hiddenWidths{64, 64, 64};
    int gridResolution = 32;
    int gridFeatures = 8;
    InputMode inputMode = InputMode::Continuous;
};

// Feature encoder plus MLP over one flat parameter vector laid out as
// [grid table | MLP parameters].
template <typename T>
class Network {
  public:
    Network() = default;
    // Grid and output layer start at zero; hidden layers use He initialization.
    Network(const NetworkConfig &config, const Bounds3 &sceneBounds, uint64_t seed);

    const NetworkConfig &Config() const { return config; }
    const Bounds3 &SceneBounds() const { return sceneBounds; }
    const FeatureEncoder &Encoder() const { return encoder; }
    const Mlp<T> &Model() const { return mlp; }
    int FeatureLength() const { return encoder.Length(); }
    int NumOutputs() const { return config.numOutputs; }

    size_t NumParameters() const { return params.size(); }
    size_t GridParameters() const { return encoder.Grid().NumParameters(); }
    std::span<T> Parameters() { return params; }
    std::span<const T> Parameters() const { return params; }
    std::span<const T> GridTable() const { return Parameters().first(GridParameters()); }
    std::span<const T> MlpParameters() const { return Parameters().subspan(GridParameters()); }

    // Fills every parameter (grid included) uniformly in [-scale, scale].
    void Randomize(uint64_t seed, double scale);

    void Encode(const ShadingQuery &q, std::span<T> out, GridFootprint *footprint) const;
    // featureLength x batch matrix
    Matrix<T> EncodeBatch(std::span<const ShadingQuery> queries,
                          std::vector<GridFootprint> *footprints) const;

    Matrix<T> Forward(const Matrix<T> &features,
                      std::vector<Matrix<T>> *activations = nullptr) const;
    void Logits(const ShadingQuery &q, std::span<double> logits) const;

    // Accumulates the gradient of a loss with respect to every parameter.
    void Backward(const std::vector<Matrix<T>> &activations, const Matrix<T> &dLogits,
                  std::span<const GridFootprint> footprints, std::span<double> grad) const;

  private:
    NetworkConfig config;
    Bounds3 sceneBounds;
    FeatureEncoder encoder;
    Mlp<T> mlp;
    std::vector<T> params;
};

// Trainable parameters plus Adam moments.
template <typename T>
struct NetworkState {
    Network<T> network;
    std::vector<T> m, v;
    uint64_t step = 0;

    NetworkState() = default;
    NetworkState(const NetworkConfig &config, const Bounds3 &sceneBounds, uint64_t seed)
        : network(config, sceneBounds, seed), m(network.NumParameters(), T(0)),
          v(network.NumParameters(), T(0)) {}
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
void AdamStep(NetworkState<T> &state, std::span<const double> grad, double lr,
              const AdamConfig &adam = {});

// p_c proportional to w_c * exp(f_c); evaluated as w_c * exp(f_c - max f), so zero
// logits give exactly w / sum(w). Falls back to the log domain if that underflows.
void ResidualPmf(std::span<const double> logits, std::span<const double> w,
                 std::span<double> probs);
// Plain softmax (w = 1).
void SoftmaxPmf(std::span<const double> logits, std::span<double> probs);

struct TrainingRecord {
    ShadingQuery query;
    int cluster = 0;
    int light = -1;
    double fEstimate = 0;
    double pdfArea = 1;
    double pmfInCluster = 1;
    double pmfCluster = 1;

    double Weight() const { return fEstimate / (pdfArea * pmfInCluster * pmfCluster); }
};

// Records plus, for residual training, each record's baseline weights stored as
// float log(w / max w).
class TrainingBatch {
  public:
    explicit TrainingBatch(int numClusters = 1, bool residual = true)
        : numClusters(numClusters), residual(residual) {}

    int NumClusters() const { return numClusters; }
    bool Residual() const { return residual; }
    size_t Size() const { return records.size(); }
    bool Empty() const { return records.empty(); }
    const TrainingRecord &Record(size_t i) const { return records[i]; }
    std::span<const TrainingRecord> Records() const { return records; }
    std::span<const float> LogBaseline(size_t i) const {
        return std::span<const float>(logBaseline).subspan(i * numClusters, numClusters);
    }

    void Add(const TrainingRecord &record, std::span<const double> baseline = {});
    void Append(const TrainingBatch &other);
    void Clear() {
        records.clear();
        logBaseline.clear();
    }

  private:
    int numClusters;
    bool residual;
    std::vector<TrainingRecord> records;
    std::vector<float> logBaseline;
};

struct GradientOptions {
    bool clampWeights = true;
    double clampFactor = 1e4;
};

struct GradientStats {
    double loss = 0;  // weighted NLL, sum_j weight_j / N * -log p(C_j)
    size_t activeRecords = 0;
    size_t clampedRecords = 0;
};

// Importance weight of each record in [begin, end) after the optional clamp to
// clampFactor times the median positive weight.
std::vector<double> RecordWeights(const TrainingBatch &batch, size_t begin, size_t end,
                                  const GradientOptions &options, size_t *clamped = nullptr);

// Accumulates the score-function gradient of the weighted NLL over records
// [begin, end) into grad, with p recomputed under the network's current parameters.
// Throws std::invalid_argument for records with invalid fields.
template <typename T>
GradientStats KlGradientBatch(const Network<T> &network, const TrainingBatch &batch,
                              size_t begin, size_t end, const GradientOptions &options,
                              std::span<double> grad);

template <typename T>
GradientStats KlGradientBatch(const Network<T> &network, const TrainingBatch &batch,
                              const GradientOptions &options, std::span<double> grad) {
    return KlGradientBatch(network, batch, 0, batch.Size(), options, grad);
}

// Splits the batch into steps of at most batchSize records; returns the steps run.
int TrainOnBatch(NetworkState<float> &state, const TrainingBatch &batch, double lr,
                 const GradientOptions &options, size_t batchSize = 16384);

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void SaveCheckpoint(const NetworkState<float> &state, const std::string &path);
NetworkState<float> LoadCheckpoint(const std::string &path);

using NetworkSnapshot = std::shared_ptr<const Network<float>>;

}  // namespace lumisel
