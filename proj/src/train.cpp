#include "stroke/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "stroke/errors.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace {

double logsumexp(const double* l, size_t k) {
    double m = l[0];
    for (size_t i = 1; i < k; ++i) m = std::max(m, l[i]);
    double s = 0.0;
    for (size_t i = 0; i < k; ++i) s += std::exp(l[i] - m);
    return m + std::log(s);
}

int argmax3(const double* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

Tensor batch_tensor(const std::vector<ImageTensor>& imgs) {
    const int64_t B = static_cast<int64_t>(imgs.size());
    const int64_t S = imgs[0].height();
    Tensor out({B, 3, S, S});
    const int64_t per = 3 * S * S;
    for (int64_t b = 0; b < B; ++b)
        std::copy(imgs[static_cast<size_t>(b)].data.data(), imgs[static_cast<size_t>(b)].data.data() + per,
                  out.data() + b * per);
    return out;
}

using Snapshot = std::vector<std::pair<std::string, Tensor>>;

Snapshot take_snapshot(const ParamStore& store) {
    Snapshot s;
    for (const Parameter* p : store.all()) s.emplace_back(p->name, p->value);
    return s;
}

void restore_snapshot(ParamStore& store, const Snapshot& s) {
    for (const auto& [name, value] : s) store.get(name).value = value;
}

}  // namespace

const char* augmentation_name(Augmentation a) {
    switch (a) {
        case Augmentation::none: return "none";
        case Augmentation::classical: return "classical";
        case Augmentation::cgan: return "cgan";
        case Augmentation::classical_cgan: return "classical+cgan";
    }
    return "none";
}

Augmentation augmentation_from_name(const std::string& s) {
    if (s == "none") return Augmentation::none;
    if (s == "classical") return Augmentation::classical;
    if (s == "cgan") return Augmentation::cgan;
    if (s == "classical+cgan") return Augmentation::classical_cgan;
    throw ConfigError("unknown augmentation '" + s + "' (expected none, classical, cgan or classical+cgan)");
}

void TrainConfig::validate() const {
    if (optimizer != "adam") throw ConfigError("optimizer must be 'adam'");
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    for (double s : normalize_std)
        if (s <= 0.0) throw ConfigError("normalize_std entries must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"optimizer", cfg.optimizer},
                          {"learning_rate", cfg.learning_rate},
                          {"batch_size", cfg.batch_size},
                          {"epochs", cfg.epochs},
                          {"dropout", cfg.dropout},
                          {"freeze_mode", cfg.freeze_mode == FreezeMode::head_only ? "head_only" : "full"},
                          {"use_class_weights", cfg.use_class_weights},
                          {"augmentation", augmentation_name(cfg.augmentation)},
                          {"seed", cfg.seed},
                          {"augment", nlohmann::json{{"crop_scale_min", cfg.augment_policy.crop_scale_range.first},
                                                     {"crop_scale_max", cfg.augment_policy.crop_scale_range.second},
                                                     {"hflip_prob", cfg.augment_policy.hflip_prob},
                                                     {"rotation_max_degrees", cfg.augment_policy.rotation_max_degrees},
                                                     {"jitter_brightness", cfg.augment_policy.jitter_brightness},
                                                     {"jitter_contrast", cfg.augment_policy.jitter_contrast}}},
                          {"normalize_mean", cfg.normalize_mean},
                          {"normalize_std", cfg.normalize_std}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    try {
        cfg.optimizer = j.value("optimizer", cfg.optimizer);
        cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.dropout = j.value("dropout", cfg.dropout);
        if (j.contains("freeze_mode")) {
            const std::string f = j.at("freeze_mode").get<std::string>();
            if (f == "head_only")
                cfg.freeze_mode = FreezeMode::head_only;
            else if (f == "full")
                cfg.freeze_mode = FreezeMode::full;
            else
                throw ConfigError("freeze_mode must be head_only or full");
        }
        cfg.use_class_weights = j.value("use_class_weights", cfg.use_class_weights);
        if (j.contains("augmentation")) cfg.augmentation = augmentation_from_name(j.at("augmentation").get<std::string>());
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            cfg.augment_policy.crop_scale_range.first = a.value("crop_scale_min", cfg.augment_policy.crop_scale_range.first);
            cfg.augment_policy.crop_scale_range.second =
                a.value("crop_scale_max", cfg.augment_policy.crop_scale_range.second);
            cfg.augment_policy.hflip_prob = a.value("hflip_prob", cfg.augment_policy.hflip_prob);
            cfg.augment_policy.rotation_max_degrees =
                a.value("rotation_max_degrees", cfg.augment_policy.rotation_max_degrees);
            cfg.augment_policy.jitter_brightness = a.value("jitter_brightness", cfg.augment_policy.jitter_brightness);
            cfg.augment_policy.jitter_contrast = a.value("jitter_contrast", cfg.augment_policy.jitter_contrast);
        }
        if (j.contains("normalize_mean")) cfg.normalize_mean = j.at("normalize_mean").get<std::array<double, 3>>();
        if (j.contains("normalize_std")) cfg.normalize_std = j.at("normalize_std").get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw ConfigError("softmax needs at least one logit");
    for (double l : logits)
        if (!std::isfinite(l)) throw NumericError("softmax: non-finite logit");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= s;
    return p;
}

double weighted_cross_entropy(const std::vector<double>& logits, int label, const ClassWeights& weights) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size() || label >= kNumClasses)
        throw ConfigError("label out of range");
    for (double l : logits)
        if (!std::isfinite(l)) throw NumericError("weighted_cross_entropy: non-finite logit");
    const double lse = logsumexp(logits.data(), logits.size());
    return weights.w[static_cast<size_t>(label)] * (lse - logits[static_cast<size_t>(label)]);
}

ImageTensor prepare_image(const std::filesystem::path& path, int64_t side, bool do_augment,
                          const AugmentPolicy& policy, uint64_t aug_seed, const std::array<double, 3>& mean,
                          const std::array<double, 3>& std) {
    ImageTensor img = load_and_resize(path, side);
    if (do_augment) img = augment(img, policy, aug_seed);
    return normalize(img, mean, std);
}

EvalOutput run_inference(Backbone& model, const Manifest& m, int64_t batch_size, const ClassWeights& weights,
                         const std::array<double, 3>& mean, const std::array<double, 3>& std) {
    if (m.records.empty()) throw ConfigError("cannot run inference on an empty manifest");
    const int64_t side = model.config().image_side;
    EvalOutput out;
    double wloss = 0.0, wsum = 0.0;
    int64_t correct = 0;
    for (size_t start = 0; start < m.records.size(); start += static_cast<size_t>(batch_size)) {
        const size_t stop = std::min(m.records.size(), start + static_cast<size_t>(batch_size));
        std::vector<ImageTensor> imgs;
        std::vector<int> labels;
        for (size_t i = start; i < stop; ++i) {
            imgs.push_back(prepare_image(m.records[i].path, side, false, {}, 0, mean, std));
            labels.push_back(m.records[i].label);
        }
        Tape t;
        Forward fw = model.forward(t, t.leaf(batch_tensor(imgs)), false, 0);
        const Tensor& logits = t.val(fw.logits);
        const int k = static_cast<int>(logits.dim(1));
        for (size_t i = 0; i < imgs.size(); ++i) {
            const double* row = logits.data() + static_cast<int64_t>(i) * k;
            const int label = labels[i];
            const int pred = argmax3(row, k);
            out.labels.push_back(label);
            out.predictions.push_back(pred);
            correct += pred == label;
            const double w = weights.w[static_cast<size_t>(label)];
            wloss += w * (logsumexp(row, static_cast<size_t>(k)) - row[label]);
            wsum += w;
        }
    }
    out.loss = wloss / wsum;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.labels.size());
    return out;
}

TrainState fit(const Manifest& train_m, const Manifest& test_m, Backbone& model, const TrainConfig& cfg,
               const std::filesystem::path& checkpoint_dir) {
    cfg.validate();
    if (train_m.records.empty()) throw ConfigError("fit: training manifest is empty");
    if (test_m.records.empty()) throw ConfigError("fit: evaluation manifest is empty");
    if (!model.has_head()) throw Error("fit requires a classification head; call replace_head first");
    model.apply_freeze(cfg.freeze_mode);

    ClassWeights weights;
    weights.w.fill(1.0);
    if (cfg.use_class_weights) weights = class_weights(train_m);
    std::vector<double> wvec(weights.w.begin(), weights.w.end());

    const bool do_augment = cfg.augment_policy.enabled && (cfg.augmentation == Augmentation::classical ||
                                                           cfg.augmentation == Augmentation::classical_cgan);
    const int64_t side = model.config().image_side;
    const uint64_t shuffle_root = derive_seed(cfg.seed, "epoch-shuffle");
    const uint64_t augment_root = derive_seed(cfg.seed, "augment");
    const uint64_t dropout_root = derive_seed(cfg.seed, "dropout");

    Adam opt(cfg.learning_rate);
    TrainState state;
    Snapshot best;
    bool have_best = false;

    auto write_checkpoint = [&](int64_t epoch) {
        if (checkpoint_dir.empty()) return;
        std::filesystem::create_directories(checkpoint_dir);
        state.checkpoint_path = checkpoint_dir / "best.stk";
        nlohmann::json hist = nlohmann::json::array();
        for (const EpochStats& h : state.history)
            hist.push_back({{"epoch", h.epoch},
                            {"train_loss", h.train_loss},
                            {"train_accuracy", h.train_accuracy},
                            {"eval_loss", h.eval_loss},
                            {"eval_accuracy", h.eval_accuracy}});
        save_backbone(state.checkpoint_path, model,
                      nlohmann::json{{"train_config", train_config_to_json(cfg)}, {"epoch", epoch}, {"history", hist}});
    };

    std::vector<size_t> order(train_m.records.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(shuffle_root, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double wloss = 0.0, wsum = 0.0;
        int64_t correct = 0, step = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size), ++step) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<ImageTensor> imgs;
            std::vector<int> labels;
            for (size_t i = start; i < stop; ++i) {
                const ImageRecord& rec = train_m.records[order[i]];
                const uint64_t aug_seed =
                    derive_seed(augment_root, static_cast<uint64_t>(epoch), static_cast<uint64_t>(order[i]));
                imgs.push_back(prepare_image(rec.path, side, do_augment, cfg.augment_policy, aug_seed,
                                             cfg.normalize_mean, cfg.normalize_std));
                labels.push_back(rec.label);
            }
            Tape t;
            const uint64_t drop_seed =
                derive_seed(dropout_root, static_cast<uint64_t>(epoch), static_cast<uint64_t>(step));
            Forward fw = model.forward(t, t.leaf(batch_tensor(imgs)), true, drop_seed);
            Value loss = t.weighted_ce(fw.logits, labels, wvec, true);
            const double loss_val = t.val(loss).data()[0];

            double batch_w = 0.0;
            for (int l : labels) batch_w += weights.w[static_cast<size_t>(l)];
            if (!std::isfinite(loss_val)) {
                if (have_best) restore_snapshot(model.params(), best);
                throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                   (state.checkpoint_path.empty()
                                        ? std::string(have_best ? "; parameters restored to last good epoch" : "")
                                        : "; last good checkpoint at " + state.checkpoint_path.string()));
            }
            wloss += loss_val * batch_w;
            wsum += batch_w;
            const Tensor& logits = t.val(fw.logits);
            const int k = static_cast<int>(logits.dim(1));
            for (size_t i = 0; i < labels.size(); ++i)
                correct += argmax3(logits.data() + static_cast<int64_t>(i) * k, k) == labels[i];

            if (cfg.learning_rate > 0.0) {
                model.params().zero_grads();
                t.backward(loss);
                model.params().accumulate_grads(t);
                opt.step(model.params().all());
            }
        }

        EvalOutput ev = run_inference(model, test_m, cfg.batch_size, weights, cfg.normalize_mean, cfg.normalize_std);
        state.history.push_back({epoch, wloss / wsum, static_cast<double>(correct) / static_cast<double>(order.size()),
                                 ev.loss, ev.accuracy});

        if (!have_best || ev.accuracy >= state.best_eval_accuracy) {
            state.best_eval_accuracy = ev.accuracy;
            state.best_epoch = epoch;
            best = take_snapshot(model.params());
            have_best = true;
            write_checkpoint(epoch);
        }
    }

    restore_snapshot(model.params(), best);
    return state;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,train_accuracy,eval_loss,eval_accuracy\n";
    char buf[256];
    for (const EpochStats& h : history) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(h.epoch),
                      h.train_loss, h.train_accuracy, h.eval_loss, h.eval_accuracy);
        out << buf;
    }
}

}  // namespace stroke
