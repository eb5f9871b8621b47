#include "stroke/cgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "stroke/archive.hpp"
#include "stroke/augment.hpp"
#include "stroke/errors.hpp"
#include "stroke/image_io.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace {

bool power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int64_t up_count(int64_t side) {
    int64_t n = 0;
    for (int64_t s = 4; s < side; s *= 2) ++n;
    return n;
}

/// Channel width entering transposed-conv stage i of n (stage n-1 emits 1).
int64_t gen_channels(int64_t base, int64_t n, int64_t i) { return base << (n - 1 - i); }

void init_param(Parameter& p, uint64_t seed, const std::string& role) {
    Rng rng(derive_seed(derive_seed(seed, "gan-init-" + role), p.name));
    init_trunc_normal(p.value, rng, 0.02);
}

Tensor real_plane(const std::filesystem::path& path, int64_t side) {
    ImageTensor img = load_and_resize(path, side);
    Tensor plane({1, side, side});
    std::copy(img.data.data(), img.data.data() + side * side, plane.data());
    return plane;
}

Tensor stack_batch(const std::vector<const Tensor*>& planes) {
    const int64_t B = static_cast<int64_t>(planes.size());
    const int64_t S = planes[0]->dim(1);
    Tensor out({B, 1, S, S});
    for (int64_t b = 0; b < B; ++b)
        std::copy(planes[static_cast<size_t>(b)]->data(), planes[static_cast<size_t>(b)]->data() + S * S,
                  out.data() + b * S * S);
    return out;
}

double tensor_mean(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t.data()[i];
    return s / static_cast<double>(t.size());
}

Tensor noise_batch(int64_t B, int64_t dim, Rng& rng) {
    Tensor z({B, dim});
    for (int64_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    return z;
}

}  // namespace

void GanConfig::validate() const {
    if (noise_dim < 1) throw ConfigError("noise_dim must be >= 1");
    if (gen_image_side < 8 || gen_image_side % 4 != 0 || !power_of_two(gen_image_side / 4))
        throw ConfigError("gen_image_side must be 4 * 2^n with n >= 1");
    if (num_classes != kNumClasses) throw ConfigError("num_classes must be 3");
    if (stabilization_epochs < 0 || generation_epochs < 0) throw ConfigError("epoch counts must be >= 0");
    if (images_per_generation_epoch < 1) throw ConfigError("images_per_generation_epoch must be >= 1");
    if (minority_classes.empty()) throw ConfigError("minority_classes must not be empty");
    for (int c : minority_classes)
        if (c < 0 || c >= kNumClasses) throw ConfigError("minority class " + std::to_string(c) + " out of range");
    if (std::find(minority_classes.begin(), minority_classes.end(), 0) != minority_classes.end())
        throw PolicyViolationError("the normal class (0) must never be synthesized");
    if (images_per_generation_epoch % static_cast<int64_t>(minority_classes.size()) != 0)
        throw ConfigError("images_per_generation_epoch must divide evenly across minority classes");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (base_channels < 1 || label_embed_dim < 1) throw ConfigError("widths must be >= 1");
}

void GanConfig::validate_against(const Manifest& m) const {
    validate();
    for (int c : minority_classes)
        if (m.class_counts[static_cast<size_t>(c)] == 0)
            throw ConfigError("minority class '" + std::string(class_dir_name(c)) + "' has no images in the manifest");
}

nlohmann::json gan_config_to_json(const GanConfig& cfg) {
    return nlohmann::json{{"noise_dim", cfg.noise_dim},
                          {"gen_image_side", cfg.gen_image_side},
                          {"num_classes", cfg.num_classes},
                          {"stabilization_epochs", cfg.stabilization_epochs},
                          {"generation_epochs", cfg.generation_epochs},
                          {"images_per_generation_epoch", cfg.images_per_generation_epoch},
                          {"minority_classes", cfg.minority_classes},
                          {"learning_rate", cfg.learning_rate},
                          {"batch_size", cfg.batch_size},
                          {"base_channels", cfg.base_channels},
                          {"label_embed_dim", cfg.label_embed_dim}};
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
    GanConfig cfg;
    try {
        cfg.noise_dim = j.value("noise_dim", cfg.noise_dim);
        cfg.gen_image_side = j.value("gen_image_side", cfg.gen_image_side);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.stabilization_epochs = j.value("stabilization_epochs", cfg.stabilization_epochs);
        cfg.generation_epochs = j.value("generation_epochs", cfg.generation_epochs);
        cfg.images_per_generation_epoch = j.value("images_per_generation_epoch", cfg.images_per_generation_epoch);
        if (j.contains("minority_classes")) cfg.minority_classes = j.at("minority_classes").get<std::vector<int>>();
        cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.base_channels = j.value("base_channels", cfg.base_channels);
        cfg.label_embed_dim = j.value("label_embed_dim", cfg.label_embed_dim);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad gan config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

const char* gan_phase_name(GanState::Phase p) {
    switch (p) {
        case GanState::Phase::stabilization: return "stabilization";
        case GanState::Phase::generation: return "generation";
        case GanState::Phase::done: return "done";
    }
    return "done";
}

GanState::Phase phase_for(int64_t completed_epochs, const GanConfig& cfg) {
    if (completed_epochs < cfg.stabilization_epochs) return GanState::Phase::stabilization;
    if (completed_epochs >= cfg.total_epochs()) return GanState::Phase::done;
    return GanState::Phase::generation;
}

void init_gan_params(ParamStore& gen, ParamStore& disc, const GanConfig& cfg, uint64_t seed) {
    const int64_t S = cfg.gen_image_side;
    const int64_t n = up_count(S);
    const int64_t c0 = gen_channels(cfg.base_channels, n, 0);

    init_param(gen.create("embed", {cfg.num_classes, cfg.label_embed_dim}), seed, "gen");
    init_param(gen.create("fc.weight", {c0 * 16, cfg.noise_dim + cfg.label_embed_dim}), seed, "gen");
    gen.create("fc.bias", {c0 * 16});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t cin = gen_channels(cfg.base_channels, n, i);
        const int64_t cout = i + 1 == n ? 1 : gen_channels(cfg.base_channels, n, i + 1);
        const std::string p = "up" + std::to_string(i);
        init_param(gen.create(p + ".weight", {cin, cout, 4, 4}), seed, "gen");
        gen.create(p + ".bias", {cout});
    }

    init_param(disc.create("embed", {cfg.num_classes, S * S}), seed, "disc");
    int64_t cin = 2;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t cout = cfg.base_channels << i;
        const std::string p = "conv" + std::to_string(i);
        init_param(disc.create(p + ".weight", {cout, cin, 4, 4}), seed, "disc");
        disc.create(p + ".bias", {cout});
        cin = cout;
    }
    init_param(disc.create("fc.weight", {1, cin * 16}), seed, "disc");
    disc.create("fc.bias", {1});
}

Value generator_batch(Tape& t, ParamStore& gen, const GanConfig& cfg, Value z, const std::vector<int64_t>& labels) {
    const int64_t B = t.val(z).dim(0);
    if (t.val(z).rank() != 2 || t.val(z).dim(1) != cfg.noise_dim)
        throw ShapeError("generator noise must be [B," + std::to_string(cfg.noise_dim) + "]");
    if (static_cast<int64_t>(labels.size()) != B) throw ShapeError("generator labels length mismatch");
    for (int64_t l : labels)
        if (l < 0 || l >= cfg.num_classes) throw ConfigError("generator label out of range");
    const int64_t n = up_count(cfg.gen_image_side);
    const int64_t c0 = gen_channels(cfg.base_channels, n, 0);

    Value emb = t.gather_rows(gen.get("embed").bound, labels);
    Value h = t.concat({z, emb}, 1);
    h = t.relu(t.linear(h, gen.get("fc.weight").bound, gen.get("fc.bias").bound));
    h = t.reshape(h, {B, c0, 4, 4});
    for (int64_t i = 0; i < n; ++i) {
        const std::string p = "up" + std::to_string(i);
        h = t.conv_transpose2d(h, gen.get(p + ".weight").bound, 2, 1);
        h = t.add_bias_ch(h, gen.get(p + ".bias").bound);
        h = i + 1 == n ? t.sigmoid(h) : t.relu(h);
    }
    return h;
}

Value discriminator_logits(Tape& t, ParamStore& disc, const GanConfig& cfg, Value images,
                           const std::vector<int64_t>& labels) {
    const Tensor& x = t.val(images);
    const int64_t S = cfg.gen_image_side;
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != S || x.dim(3) != S)
        throw ShapeError("discriminator expects [B,1," + std::to_string(S) + "," + std::to_string(S) + "], got " +
                         x.shape_str());
    const int64_t B = x.dim(0);
    if (static_cast<int64_t>(labels.size()) != B) throw ShapeError("discriminator labels length mismatch");
    for (int64_t l : labels)
        if (l < 0 || l >= cfg.num_classes) throw ConfigError("discriminator label out of range");

    Value emb = t.gather_rows(disc.get("embed").bound, labels);
    emb = t.reshape(emb, {B, 1, S, S});
    Value h = t.concat({images, emb}, 1);
    const int64_t n = up_count(S);
    for (int64_t i = 0; i < n; ++i) {
        const std::string p = "conv" + std::to_string(i);
        h = t.add_bias_ch(t.conv2d(h, disc.get(p + ".weight").bound, 2, 1), disc.get(p + ".bias").bound);
        h = t.leaky_relu(h, 0.2);
    }
    const int64_t flat = t.val(h).size() / B;
    h = t.reshape(h, {B, flat});
    return t.linear(h, disc.get("fc.weight").bound, disc.get("fc.bias").bound);
}

Tensor generator_forward(ParamStore& gen, const GanConfig& cfg, const std::vector<double>& z, int label) {
    if (static_cast<int64_t>(z.size()) != cfg.noise_dim)
        throw ConfigError("noise vector must have length " + std::to_string(cfg.noise_dim));
    Tape t;
    gen.bind(t);
    Tensor zt({1, cfg.noise_dim});
    std::copy(z.begin(), z.end(), zt.data());
    Value out = generator_batch(t, gen, cfg, t.leaf(std::move(zt)), {label});
    Tensor img({1, cfg.gen_image_side, cfg.gen_image_side});
    std::copy(t.val(out).data(), t.val(out).data() + img.size(), img.data());
    return img;
}

double discriminator_forward(ParamStore& disc, const GanConfig& cfg, const Tensor& img, int label) {
    if (img.rank() != 3 || img.dim(0) != 1 || img.dim(1) != cfg.gen_image_side || img.dim(2) != cfg.gen_image_side)
        throw ShapeError("discriminator_forward expects [1,S,S], got " + img.shape_str());
    Tape t;
    disc.bind(t);
    Tensor batch({1, 1, cfg.gen_image_side, cfg.gen_image_side});
    std::copy(img.data(), img.data() + img.size(), batch.data());
    Value logits = discriminator_logits(t, disc, cfg, t.leaf(std::move(batch)), {label});
    return 1.0 / (1.0 + std::exp(-t.val(logits).data()[0]));
}

void synthesize_epoch(ParamStore& gen, const GanConfig& cfg, int64_t epoch, uint64_t seed,
                      const std::filesystem::path& out_dir) {
    const int64_t per = cfg.images_per_generation_epoch / static_cast<int64_t>(cfg.minority_classes.size());
    const int64_t S = cfg.gen_image_side;
    char name[64];
    for (int c : cfg.minority_classes) {
        const std::filesystem::path dir = out_dir / class_dir_name(c);
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        Rng rng(derive_seed(derive_seed(seed, "gan-generate"), static_cast<uint64_t>(epoch), static_cast<uint64_t>(c)));
        Tensor z = noise_batch(per, cfg.noise_dim, rng);
        // chunked forward keeps activation memory bounded
        for (int64_t start = 0; start < per; start += 64) {
            const int64_t m = std::min<int64_t>(64, per - start);
            Tensor zc({m, cfg.noise_dim});
            std::copy(z.data() + start * cfg.noise_dim, z.data() + (start + m) * cfg.noise_dim, zc.data());
            Tape t;
            gen.bind(t);
            Value out = generator_batch(t, gen, cfg, t.leaf(std::move(zc)),
                                        std::vector<int64_t>(static_cast<size_t>(m), c));
            const Tensor& imgs = t.val(out);
            for (int64_t i = 0; i < m; ++i) {
                std::snprintf(name, sizeof name, "ep%04lld_%03lld.png", static_cast<long long>(epoch),
                              static_cast<long long>(start + i));
                write_png_gray(dir / name, imgs.data() + i * S * S, S, S);
            }
        }
    }
}

GanState train_cgan(const Manifest& train_manifest, const GanConfig& cfg, uint64_t seed,
                    const std::filesystem::path& out_dir) {
    cfg.validate_against(train_manifest);
    if (train_manifest.records.empty()) throw ConfigError("train_cgan: empty manifest");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const int64_t S = cfg.gen_image_side;
    GanState state;
    init_gan_params(state.gen, state.disc, cfg, seed);
    Adam opt_g(cfg.learning_rate, 0.5, 0.999);
    Adam opt_d(cfg.learning_rate, 0.5, 0.999);

    // cache the training planes once; per-class means double as the target
    // statistics for the conditioning diagnostics
    std::vector<Tensor> planes;
    planes.reserve(train_manifest.records.size());
    std::array<double, kNumClasses> mean_sum{};
    std::array<int64_t, kNumClasses> mean_n{};
    for (const ImageRecord& rec : train_manifest.records) {
        planes.push_back(real_plane(rec.path, S));
        const auto c = static_cast<size_t>(rec.label);
        if (mean_n[c] < 64) {
            mean_sum[c] += tensor_mean(planes.back());
            ++mean_n[c];
        }
    }
    for (int c = 0; c < kNumClasses; ++c)
        state.real_mean[static_cast<size_t>(c)] =
            mean_n[static_cast<size_t>(c)] ? mean_sum[static_cast<size_t>(c)] / mean_n[static_cast<size_t>(c)] : 0.0;

    const uint64_t shuffle_root = derive_seed(seed, "gan-shuffle");
    const uint64_t noise_root = derive_seed(seed, "gan-noise");
    const uint64_t probe_root = derive_seed(seed, "gan-probe");
    std::vector<size_t> order(planes.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int64_t epoch = 1; epoch <= cfg.total_epochs(); ++epoch) {
        // epoch numbers are 1-based; an epoch belongs to the generation
        // schedule exactly when it lies past the stabilization budget
        const bool generation_epoch = epoch > cfg.stabilization_epochs;

        Rng shuffle_rng(derive_seed(shuffle_root, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double g_sum = 0.0, d_sum = 0.0;
        int64_t steps = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size), ++steps) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const int64_t B = static_cast<int64_t>(stop - start);
            std::vector<const Tensor*> real_ptrs;
            std::vector<int64_t> real_labels;
            for (size_t i = start; i < stop; ++i) {
                real_ptrs.push_back(&planes[order[i]]);
                real_labels.push_back(train_manifest.records[order[i]].label);
            }
            Rng step_rng(derive_seed(noise_root, static_cast<uint64_t>(epoch), static_cast<uint64_t>(steps)));
            Tensor z = noise_batch(B, cfg.noise_dim, step_rng);
            std::vector<int64_t> fake_labels(static_cast<size_t>(B));
            for (int64_t& l : fake_labels) l = step_rng.uniform_int(cfg.num_classes);

            // detached fake batch for the discriminator update
            Tensor fake_imgs;
            {
                Tape t;
                state.gen.bind(t);
                Value out = generator_batch(t, state.gen, cfg, t.leaf(z), fake_labels);
                fake_imgs = t.val(out);
            }

            double d_loss_val;
            {
                Tape t;
                state.disc.bind(t);
                Value lr_real = discriminator_logits(t, state.disc, cfg, t.leaf(stack_batch(real_ptrs)), real_labels);
                Value lr_fake = discriminator_logits(t, state.disc, cfg, t.leaf(std::move(fake_imgs)), fake_labels);
                Tensor ones({B, 1});
                std::fill(ones.data(), ones.data() + B, 1.0);
                Value d_loss = t.add(t.bce_with_logits_mean(lr_real, std::move(ones)),
                                     t.bce_with_logits_mean(lr_fake, Tensor({B, 1})));
                d_loss_val = t.val(d_loss).data()[0];
                if (std::isfinite(d_loss_val)) {
                    state.disc.zero_grads();
                    t.backward(d_loss);
                    state.disc.accumulate_grads(t);
                    opt_d.step(state.disc.all());
                }
            }

            double g_loss_val;
            {
                Tape t;
                state.gen.bind(t);
                state.disc.bind(t);
                Value out = generator_batch(t, state.gen, cfg, t.leaf(z), fake_labels);
                Value logits = discriminator_logits(t, state.disc, cfg, out, fake_labels);
                Tensor ones({B, 1});
                std::fill(ones.data(), ones.data() + B, 1.0);
                Value g_loss = t.bce_with_logits_mean(logits, std::move(ones));
                g_loss_val = t.val(g_loss).data()[0];
                if (std::isfinite(g_loss_val)) {
                    state.gen.zero_grads();
                    t.backward(g_loss);
                    state.gen.accumulate_grads(t);
                    opt_g.step(state.gen.all());
                }
            }

            if (!std::isfinite(d_loss_val) || !std::isfinite(g_loss_val))
                throw NumericError("train_cgan: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(steps) + " (gen=" + std::to_string(g_loss_val) +
                                   ", disc=" + std::to_string(d_loss_val) + ")");
            g_sum += g_loss_val;
            d_sum += d_loss_val;
        }

        state.loss_history.push_back({epoch, g_sum / static_cast<double>(steps), d_sum / static_cast<double>(steps)});

        // class-conditional output statistics for the conditioning diagnostics
        std::array<double, kNumClasses> means{};
        for (int c : cfg.minority_classes) {
            Rng probe_rng(derive_seed(probe_root, static_cast<uint64_t>(epoch), static_cast<uint64_t>(c)));
            Tensor z = noise_batch(8, cfg.noise_dim, probe_rng);
            Tape t;
            state.gen.bind(t);
            Value out = generator_batch(t, state.gen, cfg, t.leaf(std::move(z)), std::vector<int64_t>(8, c));
            means[static_cast<size_t>(c)] = tensor_mean(t.val(out));
        }
        state.gen_mean_history.push_back(means);

        if (generation_epoch) synthesize_epoch(state.gen, cfg, epoch, seed, out_dir);
        state.epoch = epoch;
        state.phase = phase_for(epoch, cfg);
    }

    save_gan_checkpoint(out_dir / "cgan.stk", state, cfg);
    return state;
}

void save_gan_checkpoint(const std::filesystem::path& path, const GanState& state, const GanConfig& cfg) {
    std::vector<NamedTensor> tensors;
    for (const Parameter* p : state.gen.all()) tensors.push_back({"gen." + p->name, p->value});
    for (const Parameter* p : state.disc.all()) tensors.push_back({"disc." + p->name, p->value});
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : state.loss_history) hist.push_back({h.epoch, h.gen_loss, h.disc_loss});
    write_archive(path, tensors,
                  nlohmann::json{{"format", "cgan"},
                                 {"config", gan_config_to_json(cfg)},
                                 {"epoch", state.epoch},
                                 {"phase", gan_phase_name(state.phase)},
                                 {"loss_history", hist}});
}

GanState load_gan_checkpoint(const std::filesystem::path& path, GanConfig& cfg_out) {
    Archive a = read_archive(path);
    if (a.meta.value("format", "") != "cgan") throw SchemaError(path.string() + " is not a cgan checkpoint");
    cfg_out = gan_config_from_json(a.meta.at("config"));
    GanState state;
    init_gan_params(state.gen, state.disc, cfg_out, 0);
    Archive gen_part, disc_part;
    for (NamedTensor& nt : a.tensors) {
        if (nt.name.rfind("gen.", 0) == 0)
            gen_part.tensors.push_back({nt.name.substr(4), std::move(nt.tensor)});
        else if (nt.name.rfind("disc.", 0) == 0)
            disc_part.tensors.push_back({nt.name.substr(5), std::move(nt.tensor)});
        else
            throw SchemaError("unexpected tensor '" + nt.name + "' in " + path.string());
    }
    load_archive_into_store(gen_part, state.gen);
    load_archive_into_store(disc_part, state.disc);
    state.epoch = a.meta.value("epoch", 0);
    const std::string phase = a.meta.value("phase", "done");
    state.phase = phase == "stabilization" ? GanState::Phase::stabilization
                  : phase == "generation"  ? GanState::Phase::generation
                                           : GanState::Phase::done;
    if (a.meta.contains("loss_history"))
        for (const auto& row : a.meta.at("loss_history"))
            state.loss_history.push_back({row.at(0).get<int64_t>(), row.at(1).get<double>(), row.at(2).get<double>()});
    return state;
}

Manifest merge_synthetic(const Manifest& train_manifest, const std::filesystem::path& synth_root,
                         int64_t merge_count_per_class) {
    if (!std::filesystem::exists(synth_root)) throw IoError("synthetic root not found: " + synth_root.string());

    // the normal class must never receive synthetic data
    const std::filesystem::path normal_dir = synth_root / class_dir_name(0);
    if (std::filesystem::exists(normal_dir))
        for (const auto& e : std::filesystem::directory_iterator(normal_dir))
            if (e.is_regular_file())
                throw PolicyViolationError("synthetic image for the normal class: " + e.path().string());

    Manifest merged = train_manifest;
    int64_t largest = *std::max_element(merged.class_counts.begin(), merged.class_counts.end());
    for (int c = 1; c < kNumClasses; ++c) {
        const std::filesystem::path dir = synth_root / class_dir_name(c);
        if (!std::filesystem::exists(dir)) continue;
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        int64_t want = merge_count_per_class >= 0 ? merge_count_per_class
                                                  : largest - merged.class_counts[static_cast<size_t>(c)];
        want = std::clamp<int64_t>(want, 0, static_cast<int64_t>(files.size()));
        // newest epochs carry the most-trained generator: take from the end
        std::vector<std::filesystem::path> chosen(files.end() - want, files.end());
        std::sort(chosen.begin(), chosen.end());
        for (const auto& p : chosen)
            merged.records.push_back({p, c, ImageRecord::Origin::synthetic, ImageRecord::Split::train});
    }
    merged.retally();
    return merged;
}

}  // namespace stroke
