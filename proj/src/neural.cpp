// SPDX-License-Identifier: Apache-2.0

#include <lumisel/neural.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace lumisel {

template <typename T>
Mlp<T>::Mlp(const std::vector<int> &widths) {
    if (widths.size() < 2)
        throw std::invalid_argument("MLP needs at least an input and an output width");
    for (int w : widths)
        if (w <= 0)
            throw std::invalid_argument("MLP widths must be positive");
    size_t offset = 0;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        Layer layer;
        layer.in = widths[l];
        layer.out = widths[l + 1];
        layer.weightOffset = offset;
        offset += size_t(layer.in) * layer.out;
        layer.biasOffset = offset;
        offset += layer.out;
        layers.push_back(layer);
    }
    numParameters = offset;
}

template <typename T>
Matrix<T> Mlp<T>::Forward(std::span<const T> params, const Matrix<T> &x,
                          std::vector<Matrix<T>> *activations) const {
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    if (activations) {
        activations->clear();
        activations->push_back(x);
    }
    Matrix<T> a = x;
    for (size_t l = 0; l < layers.size(); ++l) {
        const Layer &L = layers[l];
        Eigen::Map<const Matrix<T>> W(params.data() + L.weightOffset, L.out, L.in);
        Eigen::Map<const Vector> b(params.data() + L.biasOffset, L.out);
        Matrix<T> z = W * a;
        z.colwise() += b;
        if (l + 1 < layers.size()) {
            z = z.cwiseMax(T(0));
            if (activations)
                activations->push_back(z);
        }
        a = std::move(z);
    }
    return a;
}

template <typename T>
void Mlp<T>::Backward(std::span<const T> params, const std::vector<Matrix<T>> &activations,
                      Matrix<T> g, std::span<double> grad, Matrix<T> *dInput) const {
    for (int l = int(layers.size()) - 1; l >= 0; --l) {
        const Layer &L = layers[l];
        const Matrix<T> &a = activations[l];
        Matrix<T> dW = g * a.transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> db = g.rowwise().sum();
        double *gw = grad.data() + L.weightOffset;
        for (Eigen::Index i = 0; i < dW.size(); ++i)
            gw[i] += double(dW.data()[i]);
        double *gb = grad.data() + L.biasOffset;
        for (int i = 0; i < L.out; ++i)
            gb[i] += double(db[i]);
        if (l == 0 && !dInput)
            break;
        Eigen::Map<const Matrix<T>> W(params.data() + L.weightOffset, L.out, L.in);
        Matrix<T> gi = W.transpose() * g;
        if (l > 0)
            g = gi.cwiseProduct((a.array() > T(0)).template cast<T>().matrix());
        else
            *dInput = std::move(gi);
    }
}

template <typename T>
Network<T>::Network(const NetworkConfig &config, const Bounds3 &sceneBounds, uint64_t seed)
    : config(config), sceneBounds(sceneBounds),
      encoder(GridEncoding(config.gridResolution, config.gridFeatures, sceneBounds),
              config.inputMode) {
    if (config.numOutputs < 1)
        throw std::invalid_argument("network needs at least one output");
    if (config.gridResolution < 2 || config.gridFeatures < 1)
        throw std::invalid_argument("grid needs resolution >= 2 and at least one feature");
    std::vector<int> widths{encoder.Length()};
    widths.insert(widths.end(), config.hiddenWidths.begin(), config.hiddenWidths.end());
    widths.push_back(config.numOutputs);
    mlp = Mlp<T>(widths);
    size_t grid = GridParameters();
    params.assign(grid + mlp.NumParameters(), T(0));

    std::mt19937_64 rng(seed);
    auto layers = mlp.Layers();
    for (size_t l = 0; l + 1 < layers.size(); ++l) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / layers[l].in));
        T *w = params.data() + grid + layers[l].weightOffset;
        for (size_t i = 0; i < size_t(layers[l].in) * layers[l].out; ++i)
            w[i] = T(normal(rng));
    }
}

template <typename T>
void Network<T>::Randomize(uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-scale, scale);
    for (T &p : params)
        p = T(uniform(rng));
}

template <typename T>
void Network<T>::Encode(const ShadingQuery &q, std::span<T> out, GridFootprint *footprint) const {
    encoder.Encode<T>(GridTable(), q, out, footprint);
}

template <typename T>
Matrix<T> Network<T>::EncodeBatch(std::span<const ShadingQuery> queries,
                                  std::vector<GridFootprint> *footprints) const {
    Matrix<T> x(FeatureLength(), Eigen::Index(queries.size()));
    if (footprints)
        footprints->resize(queries.size());
    for (size_t j = 0; j < queries.size(); ++j)
        Encode(queries[j], std::span<T>(x.col(j).data(), size_t(FeatureLength())),
               footprints ? &(*footprints)[j] : nullptr);
    return x;
}

template <typename T>
Matrix<T> Network<T>::Forward(const Matrix<T> &features,
                              std::vector<Matrix<T>> *activations) const {
    return mlp.Forward(MlpParameters(), features, activations);
}

template <typename T>
void Network<T>::Logits(const ShadingQuery &q, std::span<double> logits) const {
    Matrix<T> x(FeatureLength(), 1);
    Encode(q, std::span<T>(x.data(), size_t(FeatureLength())), nullptr);
    Matrix<T> f = Forward(x);
    for (int c = 0; c < NumOutputs(); ++c)
        logits[c] = double(f(c, 0));
}

template <typename T>
void Network<T>::Backward(const std::vector<Matrix<T>> &activations, const Matrix<T> &dLogits,
                          std::span<const GridFootprint> footprints,
                          std::span<double> grad) const {
    size_t grid = GridParameters();
    Matrix<T> dX;
    mlp.Backward(MlpParameters(), activations, dLogits, grad.subspan(grid), &dX);
    int F = encoder.Grid().Features();
    for (size_t j = 0; j < footprints.size(); ++j)
        encoder.Grid().Backprop<T, double>(footprints[j],
                                           std::span<const T>(dX.col(j).data(), size_t(F)),
                                           grad.first(grid));
}

template <typename T>
void AdamStep(NetworkState<T> &state, std::span<const double> grad, double lr,
              const AdamConfig &adam) {
    std::span<T> p = state.network.Parameters();
    if (grad.size() != p.size())
        throw std::invalid_argument("gradient size does not match parameters");
    ++state.step;
    double c1 = 1 - std::pow(adam.beta1, double(state.step));
    double c2 = 1 - std::pow(adam.beta2, double(state.step));
    for (size_t i = 0; i < p.size(); ++i) {
        double g = grad[i];
        double m = adam.beta1 * double(state.m[i]) + (1 - adam.beta1) * g;
        double v = adam.beta2 * double(state.v[i]) + (1 - adam.beta2) * g * g;
        state.m[i] = T(m);
        state.v[i] = T(v);
        p[i] = T(double(p[i]) - lr * (m / c1) / (std::sqrt(v / c2) + adam.epsilon));
    }
}

void ResidualPmf(std::span<const double> logits, std::span<const double> w,
                 std::span<double> probs) {
    size_t S = logits.size();
    double fmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (size_t c = 0; c < S; ++c) {
        probs[c] = w[c] * std::exp(logits[c] - fmax);
        sum += probs[c];
    }
    bool valid = std::isfinite(sum) && sum > 0;
    for (size_t c = 0; valid && c < S; ++c) {
        probs[c] /= sum;
        valid = probs[c] > 0;
    }
    if (valid)
        return;
    // Log domain with a floor so that every entry stays positive.
    double m = -Infinity;
    for (size_t c = 0; c < S; ++c)
        m = std::max(m, std::log(w[c]) + logits[c]);
    sum = 0;
    for (size_t c = 0; c < S; ++c) {
        probs[c] = std::exp(std::max(std::log(w[c]) + logits[c] - m, -700.0));
        sum += probs[c];
    }
    for (size_t c = 0; c < S; ++c)
        probs[c] /= sum;
}

void SoftmaxPmf(std::span<const double> logits, std::span<double> probs) {
    std::vector<double> ones(logits.size(), 1.0);
    ResidualPmf(logits, ones, probs);
}

void TrainingBatch::Add(const TrainingRecord &record, std::span<const double> baseline) {
    if (residual && baseline.size() != size_t(numClusters))
        throw std::invalid_argument("baseline length does not match cluster count");
    records.push_back(record);
    if (!residual)
        return;
    double wmax = *std::max_element(baseline.begin(), baseline.end());
    for (double w : baseline)
        logBaseline.push_back(float(std::log(w / wmax)));
}

void TrainingBatch::Append(const TrainingBatch &other) {
    if (other.numClusters != numClusters || other.residual != residual)
        throw std::invalid_argument("incompatible training batches");
    records.insert(records.end(), other.records.begin(), other.records.end());
    logBaseline.insert(logBaseline.end(), other.logBaseline.begin(), other.logBaseline.end());
}

std::vector<double> RecordWeights(const TrainingBatch &batch, size_t begin, size_t end,
                                  const GradientOptions &options, size_t *clamped) {
    std::vector<double> weights;
    weights.reserve(end - begin);
    std::vector<double> positive;
    for (size_t j = begin; j < end; ++j) {
        weights.push_back(batch.Record(j).Weight());
        if (weights.back() > 0)
            positive.push_back(weights.back());
    }
    if (clamped)
        *clamped = 0;
    if (!options.clampWeights || positive.empty())
        return weights;
    auto mid = positive.begin() + positive.size() / 2;
    std::nth_element(positive.begin(), mid, positive.end());
    double median = *mid;
    if (positive.size() % 2 == 0) {
        double below = *std::max_element(positive.begin(), mid);
        median = 0.5 * (median + below);
    }
    double limit = options.clampFactor * median;
    for (double &w : weights)
        if (w > limit) {
            w = limit;
            if (clamped)
                ++*clamped;
        }
    return weights;
}

namespace {

bool ValidVector(const Vec3 &v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

void ValidateRecord(const TrainingRecord &r, int numClusters) {
    auto positive = [](double x) { return std::isfinite(x) && x > 0; };
    if (!ValidVector(r.query.position) || !ValidVector(r.query.outDir) ||
        !ValidVector(r.query.normal))
        throw std::invalid_argument("training record has a non-finite query");
    if (!std::isfinite(r.fEstimate) || r.fEstimate < 0)
        throw std::invalid_argument("training record has an invalid f estimate");
    if (!positive(r.pdfArea) || !positive(r.pmfInCluster) || !positive(r.pmfCluster))
        throw std::invalid_argument("training record has a non-positive probability");
    if (r.cluster < 0 || r.cluster >= numClusters)
        throw std::invalid_argument("training record cluster out of range");
}

}  // namespace

template <typename T>
GradientStats KlGradientBatch(const Network<T> &network, const TrainingBatch &batch,
                              size_t begin, size_t end, const GradientOptions &options,
                              std::span<double> grad) {
    if (end <= begin)
        throw std::invalid_argument("empty training batch");
    if (batch.NumClusters() != network.NumOutputs())
        throw std::invalid_argument("batch cluster count does not match network outputs");
    if (grad.size() != network.NumParameters())
        throw std::invalid_argument("gradient size does not match parameters");
    const int S = network.NumOutputs();
    for (size_t j = begin; j < end; ++j)
        ValidateRecord(batch.Record(j), S);

    GradientStats stats;
    std::vector<double> weights = RecordWeights(batch, begin, end, options, &stats.clampedRecords);
    const double invN = 1.0 / double(end - begin);

    std::vector<size_t> active;
    for (size_t j = begin; j < end; ++j)
        if (weights[j - begin] > 0)
            active.push_back(j);
    stats.activeRecords = active.size();

    constexpr size_t kChunk = 1024;
    std::vector<ShadingQuery> queries;
    std::vector<GridFootprint> footprints;
    std::vector<Matrix<T>> activations;
    std::vector<double> combined(S);
    for (size_t start = 0; start < active.size(); start += kChunk) {
        size_t n = std::min(kChunk, active.size() - start);
        queries.clear();
        for (size_t i = 0; i < n; ++i)
            queries.push_back(batch.Record(active[start + i]).query);
        Matrix<T> x = network.EncodeBatch(queries, &footprints);
        Matrix<T> logits = network.Forward(x, &activations);
        Matrix<T> dLogits(S, Eigen::Index(n));
        for (size_t i = 0; i < n; ++i) {
            size_t j = active[start + i];
            const TrainingRecord &r = batch.Record(j);
            double m = -Infinity;
            for (int c = 0; c < S; ++c) {
                combined[c] = double(logits(c, i)) + (batch.Residual() ? batch.LogBaseline(j)[c] : 0.0);
                m = std::max(m, combined[c]);
            }
            double sum = 0;
            for (int c = 0; c < S; ++c)
                sum += std::exp(combined[c] - m);
            double scale = weights[j - begin] * invN;
            stats.loss += scale * -(combined[r.cluster] - m - std::log(sum));
            for (int c = 0; c < S; ++c) {
                double p = std::exp(combined[c] - m) / sum;
                dLogits(c, i) = T(scale * (p - (c == r.cluster ? 1.0 : 0.0)));
            }
        }
        network.Backward(activations, dLogits, footprints, grad);
    }
    return stats;
}

int TrainOnBatch(NetworkState<float> &state, const TrainingBatch &batch, double lr,
                 const GradientOptions &options, size_t batchSize) {
    int steps = 0;
    std::vector<double> grad(state.network.NumParameters());
    for (size_t begin = 0; begin < batch.Size(); begin += batchSize) {
        size_t end = std::min(batch.Size(), begin + batchSize);
        std::fill(grad.begin(), grad.end(), 0.0);
        GradientStats stats = KlGradientBatch(state.network, batch, begin, end, options, grad);
        if (stats.activeRecords == 0)
            continue;
        AdamStep(state, grad, lr);
        ++steps;
    }
    return steps;
}

namespace {

constexpr char kMagic[4] = {'L', 'S', 'N', 'N'};

class Writer {
  public:
    template <typename U>
    void Put(U value) {
        using Bits = std::conditional_t<sizeof(U) == 8, uint64_t, uint32_t>;
        static_assert(sizeof(U) == sizeof(Bits));
        Bits bits = std::bit_cast<Bits>(value);
        for (size_t i = 0; i < sizeof(Bits); ++i)
            bytes.push_back(char((bits >> (8 * i)) & 0xff));
    }
    std::vector<char> bytes;
};

class Reader {
  public:
    explicit Reader(std::vector<char> data) : bytes(std::move(data)) {}
    template <typename U>
    U Get() {
        using Bits = std::conditional_t<sizeof(U) == 8, uint64_t, uint32_t>;
        if (pos + sizeof(Bits) > bytes.size())
            throw CheckpointError("checkpoint is truncated");
        Bits bits = 0;
        for (size_t i = 0; i < sizeof(Bits); ++i)
            bits |= Bits(uint8_t(bytes[pos + i])) << (8 * i);
        pos += sizeof(Bits);
        return std::bit_cast<U>(bits);
    }
    bool AtEnd() const { return pos == bytes.size(); }

  private:
    std::vector<char> bytes;
    size_t pos = 0;
};

}  // namespace

void SaveCheckpoint(const NetworkState<float> &state, const std::string &path) {
    const Network<float> &net = state.network;
    Writer w;
    w.bytes.insert(w.bytes.end(), kMagic, kMagic + 4);
    w.Put<uint32_t>(kCheckpointVersion);
    w.Put<uint32_t>(uint32_t(net.NumOutputs()));
    w.Put<uint32_t>(uint32_t(net.FeatureLength()));
    auto layers = net.Model().Layers();
    w.Put<uint32_t>(uint32_t(layers.size()));
    for (const auto &layer : layers) {
        w.Put<uint32_t>(uint32_t(layer.in));
        w.Put<uint32_t>(uint32_t(layer.out));
    }
    w.Put<uint32_t>(uint32_t(net.Config().gridResolution));
    w.Put<uint32_t>(uint32_t(net.Config().gridFeatures));
    w.Put<uint32_t>(net.Config().inputMode == InputMode::Discrete ? 1u : 0u);
    w.Put<uint64_t>(state.step);
    for (int a = 0; a < 3; ++a)
        w.Put<double>(net.SceneBounds().pMin[a]);
    for (int a = 0; a < 3; ++a)
        w.Put<double>(net.SceneBounds().pMax[a]);
    w.Put<uint64_t>(uint64_t(net.NumParameters()));
    for (float p : net.Parameters())
        w.Put<float>(p);
    for (float m : state.m)
        w.Put<float>(m);
    for (float v : state.v)
        w.Put<float>(v);

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw CheckpointError("cannot write checkpoint " + path);
        out.write(w.bytes.data(), std::streamsize(w.bytes.size()));
        if (!out)
            throw CheckpointError("cannot write checkpoint " + path);
    }
    std::filesystem::rename(tmp, path);
}

NetworkState<float> LoadCheckpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw CheckpointError("cannot open checkpoint " + path);
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 4)
        throw CheckpointError("checkpoint is truncated");
    if (std::memcmp(data.data(), kMagic, 4) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    Reader r(std::vector<char>(data.begin() + 4, data.end()));
    uint32_t version = r.Get<uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
    NetworkConfig config;
    config.numOutputs = int(r.Get<uint32_t>());
    int featureLength = int(r.Get<uint32_t>());
    uint32_t numLayers = r.Get<uint32_t>();
    if (numLayers < 1 || numLayers > 64)
        throw CheckpointError("checkpoint has an invalid layer count");
    std::vector<std::pair<int, int>> shapes;
    for (uint32_t l = 0; l < numLayers; ++l) {
        int a = int(r.Get<uint32_t>());
        int b = int(r.Get<uint32_t>());
        shapes.emplace_back(a, b);
    }
    config.hiddenWidths.clear();
    for (uint32_t l = 0; l + 1 < numLayers; ++l)
        config.hiddenWidths.push_back(shapes[l].second);
    config.gridResolution = int(r.Get<uint32_t>());
    config.gridFeatures = int(r.Get<uint32_t>());
    config.inputMode = r.Get<uint32_t>() ? InputMode::Discrete : InputMode::Continuous;
    uint64_t step = r.Get<uint64_t>();
    Bounds3 bounds;
    for (int a = 0; a < 3; ++a)
        bounds.pMin[a] = r.Get<double>();
    for (int a = 0; a < 3; ++a)
        bounds.pMax[a] = r.Get<double>();
    uint64_t numParams = r.Get<uint64_t>();
    if (config.numOutputs < 1 || config.gridResolution < 2 || config.gridResolution > 512 ||
        config.gridFeatures < 1 || config.gridFeatures > 256)
        throw CheckpointError("checkpoint header is inconsistent");
    for (const auto &[in, out] : shapes)
        if (in < 1 || out < 1 || in > 65536 || out > 65536)
            throw CheckpointError("checkpoint header is inconsistent");
    if (numParams > data.size())
        throw CheckpointError("checkpoint is truncated");

    NetworkState<float> state(config, bounds, 0);
    if (state.network.FeatureLength() != featureLength || shapes.front().first != featureLength ||
        shapes.back().second != config.numOutputs || state.network.NumParameters() != numParams)
        throw CheckpointError("checkpoint header is inconsistent");
    for (float &p : state.network.Parameters())
        p = r.Get<float>();
    for (float &m : state.m)
        m = r.Get<float>();
    for (float &v : state.v)
        v = r.Get<float>();
    if (!r.AtEnd())
        throw CheckpointError("checkpoint has trailing data");
    state.step = step;
    return state;
}

template class Mlp<float>;
template class Mlp<double>;
template class Network<float>;
template class Network<double>;
template void AdamStep(NetworkState<float> &, std::span<const double>, double, const AdamConfig &);
template void AdamStep(NetworkState<double> &, std::span<const double>, double, const AdamConfig &);
template GradientStats KlGradientBatch(const Network<float> &, const TrainingBatch &, size_t,
                                       size_t, const GradientOptions &, std::span<double>);
template GradientStats KlGradientBatch(const Network<double> &, const TrainingBatch &, size_t,
                                       size_t, const GradientOptions &, std::span<double>);

}  // namespace lumisel
