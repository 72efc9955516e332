#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/autodiff.hpp"
#include "sdm/common.hpp"
#include "sdm/raster.hpp"

namespace sdm::nn {

// ---------------------------------------------------------------------------
// Location inputs
// ---------------------------------------------------------------------------

// Latitude/longitude rescaled to [-1, 1].
struct LocationInput {
    double lat_scaled = 0.0;
    double lon_scaled = 0.0;

    static LocationInput from_degrees(double lat, double lon) {
        return LocationInput{lat / 90.0, lon / 180.0};
    }
};

// [cos(pi*lat'), sin(pi*lat'), cos(pi*lon'), sin(pi*lon')]; periodic in the
// longitude so -180 and +180 coincide.
inline std::array<double, 4> coordinate_embedding(const LocationInput& loc) {
    return {std::cos(M_PI * loc.lat_scaled), std::sin(M_PI * loc.lat_scaled),
            std::cos(M_PI * loc.lon_scaled), std::sin(M_PI * loc.lon_scaled)};
}

// ---------------------------------------------------------------------------
// Architecture descriptor
// ---------------------------------------------------------------------------

struct ArchDescriptor {
    std::size_t in_channels = 4;
    std::size_t n_species = 1;
    std::vector<std::size_t> conv_channels = {16, 32};
    std::size_t kernel = 3;
    bool use_location = false;
    std::size_t loc_width = 256;
    std::size_t loc_blocks = 4;
    double dropout = 0.5;
    // Leading input channels treated as the reference image bands; channels
    // beyond them are initialized from the reference-band weight statistics.
    std::size_t image_channels = 4;

    std::string to_json() const {
        nlohmann::json j;
        j["in_channels"] = in_channels;
        j["n_species"] = n_species;
        j["conv_channels"] = conv_channels;
        j["kernel"] = kernel;
        j["use_location"] = use_location;
        j["loc_width"] = loc_width;
        j["loc_blocks"] = loc_blocks;
        j["dropout"] = dropout;
        j["image_channels"] = image_channels;
        return j.dump();
    }

    static ArchDescriptor from_json(const std::string& text) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad architecture descriptor: " + std::string(e.what()));
        }
        ArchDescriptor a;
        a.in_channels = j.at("in_channels").get<std::size_t>();
        a.n_species = j.at("n_species").get<std::size_t>();
        a.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
        a.kernel = j.at("kernel").get<std::size_t>();
        a.use_location = j.at("use_location").get<bool>();
        a.loc_width = j.at("loc_width").get<std::size_t>();
        a.loc_blocks = j.at("loc_blocks").get<std::size_t>();
        a.dropout = j.at("dropout").get<double>();
        a.image_channels = j.value("image_channels", std::size_t{4});
        return a;
    }

    std::size_t feature_dim() const {
        return conv_channels.back() + (use_location ? loc_width : 0);
    }
};

// Canonical parameter table for a descriptor: (name, shape) in creation
// order. Initialization draws, checkpoints and the optimizer all follow it.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_table(
    const ArchDescriptor& arch) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> table;
    std::size_t in = arch.in_channels;
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
        const std::size_t out = arch.conv_channels[i];
        table.emplace_back("conv" + std::to_string(i) + ".kernel",
                           std::vector<std::size_t>{out, in, arch.kernel, arch.kernel});
        table.emplace_back("conv" + std::to_string(i) + ".bias",
                           std::vector<std::size_t>{out});
        in = out;
    }
    if (arch.use_location) {
        const std::size_t w = arch.loc_width;
        table.emplace_back("loc.fc_in.weight", std::vector<std::size_t>{w, 4});
        table.emplace_back("loc.fc_in.bias", std::vector<std::size_t>{w});
        for (std::size_t b = 0; b < arch.loc_blocks; ++b) {
            const std::string prefix = "loc.block" + std::to_string(b);
            table.emplace_back(prefix + ".fc1.weight", std::vector<std::size_t>{w, w});
            table.emplace_back(prefix + ".fc1.bias", std::vector<std::size_t>{w});
            table.emplace_back(prefix + ".fc2.weight", std::vector<std::size_t>{w, w});
            table.emplace_back(prefix + ".fc2.bias", std::vector<std::size_t>{w});
        }
    }
    table.emplace_back("head.weight",
                       std::vector<std::size_t>{arch.n_species, arch.feature_dim()});
    table.emplace_back("head.bias", std::vector<std::size_t>{arch.n_species});
    return table;
}

struct ModelParams {
    ArchDescriptor arch;
    std::map<std::string, TensorPtr> tensors;

    const TensorPtr& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("model parameter not found: " + name);
        return it->second;
    }

    std::vector<TensorPtr> parameter_list() const {
        std::vector<TensorPtr> out;
        out.reserve(tensors.size());
        for (const auto& [name, t] : tensors) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors) n += t->size();
        return n;
    }

    void zero_grad() const {
        for (const auto& [name, t] : tensors) t->zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// Samples extra-band kernel slices from Normal(mean, std) of the reference
// band weights; all-equal reference weights degrade to that constant.
// Returns [out_c, n_extra, k, k] values in standard layout order.
inline std::vector<double> init_extra_band_weights(const Tensor& reference_kernel,
                                                   std::size_t n_extra, Rng& rng) {
    if (reference_kernel.value.empty()) {
        throw DataError("extra-band init: empty reference kernel");
    }
    if (reference_kernel.shape.size() != 4) {
        throw DataError("extra-band init: expected [O,C,K,K] reference, got " +
                        shape_str(reference_kernel.shape));
    }
    double mean = 0.0;
    for (double w : reference_kernel.value) mean += w;
    mean /= static_cast<double>(reference_kernel.value.size());
    double var = 0.0;
    for (double w : reference_kernel.value) var += (w - mean) * (w - mean);
    var /= static_cast<double>(reference_kernel.value.size());
    const double std_dev = std::sqrt(var);

    const std::size_t out_c = reference_kernel.shape[0];
    const std::size_t k = reference_kernel.shape[2];
    std::vector<double> extra(out_c * n_extra * k * k);
    for (double& w : extra) w = (std_dev == 0.0) ? mean : rng.normal(mean, std_dev);
    return extra;
}

namespace detail {

inline void he_fill(std::vector<double>& v, std::size_t fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& w : v) w = rng.normal(0.0, std_dev);
}

}  // namespace detail

// He fan-in initialization, seeded. When in_channels exceeds image_channels
// the first conv kernel is He-initialized over the image bands only and the
// remaining band slices are sampled from those weights' statistics.
inline ModelParams build_cnn(const ArchDescriptor& arch, std::uint64_t seed) {
    if (arch.conv_channels.empty()) throw UsageError("descriptor needs at least one conv layer");
    if (arch.kernel % 2 == 0) throw UsageError("conv kernel size must be odd");
    ModelParams model;
    model.arch = arch;
    Rng rng(seed);

    for (const auto& [name, shape] : parameter_table(arch)) {
        TensorPtr t = make_tensor(shape, /*requires_grad=*/true);
        if (name.ends_with(".bias")) {
            // biases start at zero
        } else if (name == "conv0.kernel" && arch.in_channels > arch.image_channels) {
            const std::size_t out_c = shape[0], k = arch.kernel;
            const std::size_t n_img = arch.image_channels;
            const std::size_t n_extra = arch.in_channels - n_img;
            Tensor reference;
            reference.shape = {out_c, n_img, k, k};
            reference.value.resize(out_c * n_img * k * k);
            detail::he_fill(reference.value, arch.in_channels * k * k, rng);
            const std::vector<double> extra = init_extra_band_weights(reference, n_extra, rng);
            for (std::size_t o = 0; o < out_c; ++o) {
                for (std::size_t c = 0; c < arch.in_channels; ++c) {
                    for (std::size_t i = 0; i < k * k; ++i) {
                        t->value[(o * arch.in_channels + c) * k * k + i] =
                            c < n_img ? reference.value[(o * n_img + c) * k * k + i]
                                      : extra[(o * n_extra + (c - n_img)) * k * k + i];
                    }
                }
            }
        } else {
            // fan-in = product of all dims but the first (outputs)
            const std::size_t fan_in = shape_size(shape) / shape[0];
            detail::he_fill(t->value, fan_in, rng);
        }
        model.tensors.emplace(name, std::move(t));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// dense(4->W) followed by residual blocks of
// dense -> relu -> dropout -> dense -> add -> relu; no classification layer.
inline TensorPtr location_encoder_forward(Tape& tape, const ModelParams& model,
                                          const TensorPtr& embeddings, bool train, Rng& rng) {
    TensorPtr h = dense(tape, embeddings, model.at("loc.fc_in.weight"),
                        model.at("loc.fc_in.bias"));
    for (std::size_t b = 0; b < model.arch.loc_blocks; ++b) {
        const std::string prefix = "loc.block" + std::to_string(b);
        TensorPtr t = dense(tape, h, model.at(prefix + ".fc1.weight"),
                            model.at(prefix + ".fc1.bias"));
        t = relu(tape, t);
        t = dropout(tape, t, model.arch.dropout, rng, train);
        t = dense(tape, t, model.at(prefix + ".fc2.weight"), model.at(prefix + ".fc2.bias"));
        h = relu(tape, add(tape, h, t));
    }
    return h;
}

// conv-relu-maxpool stack -> global average pool -> optional location
// features -> dense head. Returns logits [B, n_species].
inline TensorPtr model_forward_logits(Tape& tape, const ModelParams& model,
                                      const TensorPtr& images, const TensorPtr& loc_embeddings,
                                      bool train, Rng& rng) {
    if (images->shape.size() != 4 || images->shape[1] != model.arch.in_channels) {
        throw DataError("model expects " + std::to_string(model.arch.in_channels) +
                        " input channels, got tensor " + shape_str(images->shape));
    }
    TensorPtr x = images;
    for (std::size_t i = 0; i < model.arch.conv_channels.size(); ++i) {
        const std::string prefix = "conv" + std::to_string(i);
        x = conv2d(tape, x, model.at(prefix + ".kernel"), model.at(prefix + ".bias"));
        x = relu(tape, x);
        x = maxpool2d(tape, x);
    }
    TensorPtr feat = global_avg_pool(tape, x);
    if (model.arch.use_location) {
        if (!loc_embeddings) throw DataError("model requires location embeddings");
        const TensorPtr loc = location_encoder_forward(tape, model, loc_embeddings, train, rng);
        feat = concat_features(tape, feat, loc);
    }
    return dense(tape, feat, model.at("head.weight"), model.at("head.bias"));
}

// ---------------------------------------------------------------------------
// Weighted loss
// ---------------------------------------------------------------------------

enum class WeightFn : std::uint8_t { none = 0, identity, log, sqrt };

inline const char* weight_fn_name(WeightFn f) {
    switch (f) {
        case WeightFn::none: return "none";
        case WeightFn::identity: return "identity";
        case WeightFn::log: return "log";
        case WeightFn::sqrt: return "sqrt";
    }
    return "?";
}

inline WeightFn parse_weight_fn(const std::string& s) {
    if (s == "none") return WeightFn::none;
    if (s == "identity") return WeightFn::identity;
    if (s == "log") return WeightFn::log;
    if (s == "sqrt") return WeightFn::sqrt;
    throw UsageError("unknown loss weight function: " + s);
}

// w_h = f(n_h) normalized to mean 1 within the batch. log uses ln(1+n) so a
// single-checklist hotspot keeps nonzero weight. When all raw weights are
// equal the normalized weights are exactly 1, so every f is then bit-identical
// to the unweighted loss.
inline std::vector<double> loss_weights(const std::vector<double>& checklist_counts,
                                        WeightFn f) {
    std::vector<double> w(checklist_counts.size(), 1.0);
    if (f == WeightFn::none || w.empty()) return w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double n = checklist_counts[i];
        if (!(n >= 1.0)) throw DataError("checklist count must be >= 1 for weighting");
        switch (f) {
            case WeightFn::identity: w[i] = n; break;
            case WeightFn::log: w[i] = std::log1p(n); break;
            case WeightFn::sqrt: w[i] = std::sqrt(n); break;
            default: break;
        }
    }
    bool all_equal = true;
    for (double v : w) all_equal = all_equal && (v == w[0]);
    if (all_equal) return std::vector<double>(w.size(), 1.0);
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    for (double& v : w) v /= mean;
    return w;
}

inline TensorPtr weighted_loss(Tape& tape, const TensorPtr& per_hotspot_losses,
                               const std::vector<double>& checklist_counts, WeightFn f) {
    return weighted_mean(tape, per_hotspot_losses, loss_weights(checklist_counts, f));
}

// ---------------------------------------------------------------------------
// Optimizer + learning-rate schedule
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(std::vector<TensorPtr> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double epsilon = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
        for (const TensorPtr& p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void zero_grad() {
        for (const TensorPtr& p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = *params_[pi];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
                v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
                const double mhat = m_[pi][i] / bc1;
                const double vhat = v_[pi][i] / bc2;
                p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
};

// Halves (by `factor`) the learning rate after `patience` epochs without a
// validation improvement of more than `threshold`.
class PlateauScheduler {
public:
    PlateauScheduler(double factor, std::size_t patience, double min_lr,
                     double threshold = 1e-5)
        : factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {}

    double update(double lr, double val_loss) {
        if (val_loss < best_ - threshold_) {
            best_ = val_loss;
            wait_ = 0;
            return lr;
        }
        if (++wait_ >= patience_) {
            wait_ = 0;
            lr = std::max(min_lr_, lr * factor_);
        }
        return lr;
    }

private:
    double factor_;
    std::size_t patience_;
    double min_lr_;
    double threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t wait_ = 0;
};

// ---------------------------------------------------------------------------
// Datasets and the training loop
// ---------------------------------------------------------------------------

struct Sample {
    std::string hotspot_id;
    std::vector<float> patch;  // channels x H x W
    std::array<double, 4> location{};
    std::vector<float> target;
    double n_checklists = 1.0;
};

struct Dataset {
    std::size_t channels = 0, height = 0, width = 0, n_species = 0;
    bool with_location = false;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 5;
    double min_learning_rate = 1e-6;
    double plateau_threshold = 1e-5;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    WeightFn weight_fn = WeightFn::none;
    bool augment = true;

    void validate() const {
        if (batch_size == 0 || epochs == 0) throw UsageError("batch_size and epochs must be positive");
        if (!(learning_rate > 0.0) || !(min_learning_rate > 0.0)) {
            throw UsageError("learning rates must be positive");
        }
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
            throw UsageError("plateau factor must lie in (0,1)");
        }
    }
};

struct TrainLogEntry {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

inline void write_train_log(const std::vector<TrainLogEntry>& log,
                            const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    os << "epoch,train_loss,val_loss,lr\n";
    for (const TrainLogEntry& e : log) {
        os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss)
           << ',' << format_double(e.lr) << '\n';
    }
}

namespace detail {

struct Batch {
    TensorPtr images;
    TensorPtr locations;  // null when the dataset has none
    TensorPtr targets;
    std::vector<double> counts;
};

// Assembles samples [first, last) into batch tensors; optionally applies the
// two seeded flips per sample (all channels together).
inline Batch assemble_batch(const Dataset& data, const std::vector<std::size_t>& order,
                            std::size_t first, std::size_t last, bool augment, Rng* rng) {
    const std::size_t b = last - first;
    const std::size_t plane = data.channels * data.height * data.width;
    Batch batch;
    batch.images = make_tensor({b, data.channels, data.height, data.width}, false);
    batch.targets = make_tensor({b, data.n_species}, false);
    if (data.with_location) batch.locations = make_tensor({b, 4}, false);
    batch.counts.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        const Sample& s = data.samples[order[first + i]];
        double* dst = batch.images->value.data() + i * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = s.patch[p];
        if (augment && rng != nullptr) {
            const bool horizontal = rng->bernoulli(0.5);
            const bool vertical = rng->bernoulli(0.5);
            sdm::detail::flip_patch_data(dst, data.channels, data.height, data.width,
                                         horizontal, vertical);
        }
        for (std::size_t sp = 0; sp < data.n_species; ++sp) {
            batch.targets->value[i * data.n_species + sp] = s.target[sp];
        }
        if (data.with_location) {
            for (std::size_t k = 0; k < 4; ++k) {
                batch.locations->value[i * 4 + k] = s.location[k];
            }
        }
        batch.counts[i] = s.n_checklists;
    }
    return batch;
}

}  // namespace detail

// Unweighted mean cross-entropy over a dataset, eval mode (no dropout, no
// augmentation). Used for validation.
inline double evaluate_ce(const ModelParams& model, const Dataset& data,
                          std::size_t batch_size) {
    Rng unused(0);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    for (std::size_t first = 0; first < data.size(); first += batch_size) {
        const std::size_t last = std::min(data.size(), first + batch_size);
        const detail::Batch batch =
            detail::assemble_batch(data, order, first, last, false, nullptr);
        Tape tape;
        const TensorPtr logits = model_forward_logits(tape, model, batch.images,
                                                      batch.locations, false, unused);
        const TensorPtr rows = sigmoid_ce_rowwise(tape, logits, batch.targets);
        for (double r : rows->value) total += r;
        tape.clear();
    }
    return total / static_cast<double>(data.size());
}

// Adam + plateau schedule on the weighted sigmoid cross-entropy. Fully
// deterministic under config.seed: one generator drives shuffling,
// augmentation and dropout in a fixed order.
inline std::vector<TrainLogEntry> train(ModelParams& model, const Dataset& train_set,
                                        const Dataset& val_set, const TrainConfig& config) {
    config.validate();
    if (train_set.size() == 0) throw DataError("empty training set");
    if (train_set.channels != model.arch.in_channels) {
        throw DataError("dataset has " + std::to_string(train_set.channels) +
                        " channels but model expects " +
                        std::to_string(model.arch.in_channels));
    }

    Rng rng(derive_seed(config.seed, "train-loop"));
    Adam adam(model.parameter_list(), config.learning_rate, config.beta1, config.beta2,
              config.adam_epsilon);
    PlateauScheduler scheduler(config.plateau_factor, config.plateau_patience,
                               config.min_learning_rate, config.plateau_threshold);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<TrainLogEntry> log;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t first = 0; first < train_set.size(); first += config.batch_size) {
            const std::size_t last = std::min(train_set.size(), first + config.batch_size);
            const detail::Batch batch = detail::assemble_batch(
                train_set, order, first, last, config.augment, &rng);
            Tape tape;
            const TensorPtr logits = model_forward_logits(tape, model, batch.images,
                                                          batch.locations, true, rng);
            const TensorPtr rows = sigmoid_ce_rowwise(tape, logits, batch.targets);
            const TensorPtr loss = weighted_loss(tape, rows, batch.counts, config.weight_fn);
            if (!std::isfinite(loss->value[0])) {
                throw NumericError("non-finite training loss at epoch " +
                                   std::to_string(epoch) + ", batch starting at sample " +
                                   std::to_string(first));
            }
            adam.zero_grad();
            tape.backward(loss);
            adam.step();
            loss_sum += loss->value[0] * static_cast<double>(last - first);
        }
        const double train_loss = loss_sum / static_cast<double>(train_set.size());
        const double val_loss =
            val_set.size() > 0 ? evaluate_ce(model, val_set, config.batch_size) : train_loss;
        adam.set_lr(scheduler.update(adam.lr(), val_loss));
        log.push_back(TrainLogEntry{epoch, train_loss, val_loss, adam.lr()});
    }
    return log;
}

// Encounter-rate predictions in (0,1): sigmoid of the logits, eval mode.
// Row order follows the dataset; per-sample computation makes the output
// independent of batch partitioning.
inline std::vector<double> predict(const ModelParams& model, const Dataset& data,
                                   std::size_t batch_size = 64) {
    if (data.channels != model.arch.in_channels) {
        throw DataError("dataset has " + std::to_string(data.channels) +
                        " channels but model expects " +
                        std::to_string(model.arch.in_channels));
    }
    Rng unused(0);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> out;
    out.reserve(data.size() * model.arch.n_species);
    for (std::size_t first = 0; first < data.size(); first += batch_size) {
        const std::size_t last = std::min(data.size(), first + batch_size);
        const detail::Batch batch =
            detail::assemble_batch(data, order, first, last, false, nullptr);
        Tape tape;
        const TensorPtr logits = model_forward_logits(tape, model, batch.images,
                                                      batch.locations, false, unused);
        const TensorPtr probs = sigmoid(tape, logits);
        out.insert(out.end(), probs->value.begin(), probs->value.end());
        tape.clear();
    }
    return out;
}

// ---------------------------------------------------------------------------
// SDMC checkpoint: magic "SDMC", u32 version, length-prefixed UTF-8
// descriptor, then a named tensor table (name, shape, f64 data, LE).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

inline void write_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
    std::ofstream os = io::open_output(path);
    io::write_bytes(os, "SDMC", 4);
    io::write_u32(os, kCheckpointFormatVersion);
    io::write_string(os, model.arch.to_json());
    io::write_u32(os, static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& [name, t] : model.tensors) {
        io::write_string(os, name);
        io::write_u32(os, static_cast<std::uint32_t>(t->shape.size()));
        for (std::size_t d : t->shape) io::write_u64(os, d);
        for (double v : t->value) io::write_f64(os, v);
    }
    if (!os) throw DataError("failed writing " + path.string());
}

inline ModelParams read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, "SDMC", "SDMC");
    const std::uint32_t version = io::read_u32(is, "version");
    if (version != kCheckpointFormatVersion) {
        throw DataError("unsupported SDMC version " + std::to_string(version));
    }
    ModelParams model;
    model.arch = ArchDescriptor::from_json(io::read_string(is, "descriptor"));
    const auto n = io::checked_count(io::read_u32(is, "tensor count"), 1'000'000, "tensor");
    for (std::size_t i = 0; i < n; ++i) {
        const std::string name = io::read_string(is, "tensor name");
        const auto ndim = io::checked_count(io::read_u32(is, "rank"), 8, "dimension");
        std::vector<std::size_t> shape(ndim);
        for (std::size_t& d : shape) {
            d = io::checked_count(io::read_u64(is, "dim"), 1'000'000'000, "extent");
        }
        TensorPtr t = make_tensor(shape, /*requires_grad=*/true);
        for (double& v : t->value) v = io::read_f64(is, "weight");
        model.tensors.emplace(name, std::move(t));
    }
    // shape table must match the descriptor
    const auto expected = parameter_table(model.arch);
    if (expected.size() != model.tensors.size()) {
        throw DataError("checkpoint tensor count does not match descriptor");
    }
    for (const auto& [name, shape] : expected) {
        if (model.at(name)->shape != shape) {
            throw DataError("checkpoint tensor " + name + " has shape " +
                            shape_str(model.at(name)->shape) + ", descriptor expects " +
                            shape_str(shape));
        }
    }
    return model;
}

}  // namespace sdm::nn
