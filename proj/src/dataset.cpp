#include "ramer/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "ramer/io.hpp"
#include "ramer/rng.hpp"

namespace ramer {

namespace {

const char* kLabelNames[kNumClasses] = {"Happy", "Angry", "Sad", "Neutral", "Worried", "Surprise"};
const char* kSplitNames[4] = {"train", "val", "test", "unlabeled"};
const char* kModalityNames[3] = {"audio", "video", "text"};
const char* kTierNames[4] = {"small", "medium", "large", "turbo"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

const char* label_name(EmotionLabel l) { return kLabelNames[static_cast<int>(l)]; }

std::optional<EmotionLabel> parse_label(std::string_view s) {
    const std::string v = lower(s);
    for (int i = 0; i < kNumClasses; ++i)
        if (v == lower(kLabelNames[i])) return static_cast<EmotionLabel>(i);
    return std::nullopt;
}

const char* split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

std::optional<Split> parse_split(std::string_view s) {
    const std::string v = lower(s);
    for (int i = 0; i < 4; ++i)
        if (v == kSplitNames[i]) return static_cast<Split>(i);
    return std::nullopt;
}

const char* modality_name(Modality m) { return kModalityNames[static_cast<int>(m)]; }

char modality_code(Modality m) {
    switch (m) {
        case Modality::Audio: return 'a';
        case Modality::Video: return 'v';
        case Modality::Text: return 'l';
    }
    return '?';
}

const std::vector<float>& Sample::embedding(Modality m) const {
    const auto& e = embeddings[static_cast<int>(m)];
    if (!e)
        throw_error(ErrorKind::Runtime,
                    "sample " + id + " has no " + modality_name(m) + " embedding");
    return *e;
}

void Corpus::add(Sample s) {
    if (s.id.empty()) throw_error(ErrorKind::Config, "sample with empty id");
    if (index.count(s.id)) throw_error(ErrorKind::Config, "duplicate sample id: " + s.id);
    index.emplace(s.id, static_cast<int>(samples.size()));
    samples.push_back(std::move(s));
}

const Sample* Corpus::find(const std::string& id) const {
    auto it = index.find(id);
    return it == index.end() ? nullptr : &samples[it->second];
}

std::vector<int> Corpus::indices_with_split(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
        if (samples[i].split == s) out.push_back(i);
    return out;
}

std::vector<int> Corpus::labeled_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
        if (samples[i].label) out.push_back(i);
    return out;
}

std::vector<int> Corpus::unlabeled_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
        if (!samples[i].label) out.push_back(i);
    return out;
}

std::array<long, kNumClasses> label_histogram(const Corpus& c) {
    std::array<long, kNumClasses> h{};
    for (const auto& s : c.samples)
        if (s.label) ++h[static_cast<int>(*s.label)];
    return h;
}

std::array<double, kNumClasses> SyntheticConfig::default_priors() {
    // labeled class counts 1038/1208/730/1248/616/190 over 5030
    constexpr double tot = 5030.0;
    return {1038.0 / tot, 1208.0 / tot, 730.0 / tot, 1248.0 / tot, 616.0 / tot, 190.0 / tot};
}

void SyntheticConfig::validate() const {
    double sum = 0.0;
    for (double p : class_priors) {
        if (p < 0.0) throw_error(ErrorKind::Config, "class prior must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw_error(ErrorKind::Config,
                    "class priors must sum to 1 (got " + std::to_string(sum) + ")");
    if (cross_modal_correlation < 0.0 || cross_modal_correlation > 1.0)
        throw_error(ErrorKind::Config, "cross_modal_correlation must be in [0,1]");
    if (n_labeled < 0 || n_unlabeled < 0)
        throw_error(ErrorKind::Config, "sample counts must be >= 0");
    if (latent_dim < 1) throw_error(ErrorKind::Config, "latent_dim must be >= 1");
    for (int d : dims)
        if (d < latent_dim)
            throw_error(ErrorKind::Config, "modality dims must be >= latent_dim");
    if (noise_sigma < 0.0) throw_error(ErrorKind::Config, "noise_sigma must be >= 0");
    if (label_noise_rate < 0.0 || label_noise_rate > 1.0)
        throw_error(ErrorKind::Config, "label_noise_rate must be in [0,1]");
}

SyntheticModel make_synthetic_model(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticModel model;
    model.latent_dim = cfg.latent_dim;
    Rng anchor_rng(derive_seed(cfg.seed, "anchors"));
    for (int c = 0; c < kNumClasses; ++c) {
        // anchors on the sphere of radius cluster_separation; within-class
        // latent scatter is unit, so the separation knob sets class overlap
        num::Vec g(cfg.latent_dim);
        for (double& x : g) x = anchor_rng.gaussian();
        const double n = num::l2_norm(g);
        model.anchors[c].resize(cfg.latent_dim);
        for (int j = 0; j < cfg.latent_dim; ++j)
            model.anchors[c][j] = cfg.cluster_separation * g[j] / n;
    }
    for (int m = 0; m < 3; ++m) {
        const int d = cfg.dims[m];
        const int L = cfg.latent_dim;
        Rng rng(derive_seed(cfg.seed, "projection", static_cast<uint64_t>(m)));
        num::Mat p(d, L);
        for (double& x : p.a) x = rng.gaussian();
        // Modified Gram-Schmidt on columns; orthonormal columns make the
        // projection exactly invertible on the latent subspace (P^T P = I).
        for (int j = 0; j < L; ++j) {
            for (int i = 0; i < j; ++i) {
                double proj = 0.0;
                for (int r = 0; r < d; ++r) proj += p.at(r, j) * p.at(r, i);
                for (int r = 0; r < d; ++r) p.at(r, j) -= proj * p.at(r, i);
            }
            double nn = 0.0;
            for (int r = 0; r < d; ++r) nn += p.at(r, j) * p.at(r, j);
            nn = std::sqrt(nn);
            if (nn <= num::kNormEps)
                throw_error(ErrorKind::Runtime, "degenerate projection column");
            for (int r = 0; r < d; ++r) p.at(r, j) /= nn;
        }
        model.projections[m] = std::move(p);
    }
    return model;
}

namespace {

int draw_class(Rng& rng, const std::array<double, kNumClasses>& priors) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        acc += priors[c];
        if (u < acc) return c;
    }
    return kNumClasses - 1;
}

std::vector<float> project_sample(const num::Mat& p, const num::Vec& latent, double noise_sigma,
                                  Rng& rng) {
    const int d = p.rows;
    const int L = p.cols;
    std::vector<float> out(d);
    for (int r = 0; r < d; ++r) {
        double acc = 0.0;
        const double* prow = p.row(r);
        for (int j = 0; j < L; ++j) acc += prow[j] * latent[j];
        if (noise_sigma > 0.0) acc += noise_sigma * rng.gaussian();
        out[r] = static_cast<float>(acc);
    }
    return out;
}

Sample make_sample(const SyntheticConfig& cfg, const SyntheticModel& model, int index,
                   bool labeled, const std::string& id) {
    Rng rng(derive_seed(cfg.seed, "sample", static_cast<uint64_t>(index)));
    const int cls = draw_class(rng, cfg.class_priors);
    const int L = cfg.latent_dim;
    const double rho = cfg.cross_modal_correlation;

    num::Vec shared(L);
    for (int j = 0; j < L; ++j) shared[j] = model.anchors[cls][j] + rng.gaussian();

    Sample s;
    s.id = id;
    for (int m = 0; m < 3; ++m) {
        // Per-modality latent: rho blends the shared draw with an independent
        // draw from the same class, so rho=1 ties all modalities to one latent
        // and rho=0 makes them independent given the class.
        num::Vec own(L);
        for (int j = 0; j < L; ++j) own[j] = model.anchors[cls][j] + rng.gaussian();
        num::Vec mix(L);
        for (int j = 0; j < L; ++j) mix[j] = rho * shared[j] + (1.0 - rho) * own[j];
        s.embeddings[m] = project_sample(model.projections[m], mix, cfg.noise_sigma, rng);
    }
    if (labeled) {
        int reported = cls;
        if (cfg.label_noise_rate > 0.0 && rng.uniform() < cfg.label_noise_rate) {
            const int shift = 1 + static_cast<int>(rng.uniform_int(kNumClasses - 1));
            reported = (cls + shift) % kNumClasses;
        }
        s.label = static_cast<EmotionLabel>(reported);
    }
    return s;
}

std::string padded_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d", prefix, i);
    return buf;
}

}  // namespace

Corpus generate_synthetic(const SyntheticConfig& cfg) {
    const SyntheticModel model = make_synthetic_model(cfg);
    Corpus corpus;
    corpus.dims = cfg.dims;
    corpus.samples.reserve(static_cast<size_t>(cfg.n_labeled) + cfg.n_unlabeled);
    for (int i = 0; i < cfg.n_labeled; ++i)
        corpus.add(make_sample(cfg, model, i, true, padded_id("lab", i)));
    for (int i = 0; i < cfg.n_unlabeled; ++i)
        corpus.add(make_sample(cfg, model, cfg.n_labeled + i, false, padded_id("unl", i)));
    return corpus;
}

Corpus split_corpus(Corpus c, uint64_t seed) {
    std::array<std::vector<int>, kNumClasses> per_class;
    for (int i = 0; i < static_cast<int>(c.samples.size()); ++i)
        if (c.samples[i].label) per_class[static_cast<int>(*c.samples[i].label)].push_back(i);

    bool any = false;
    for (int cls = 0; cls < kNumClasses; ++cls) {
        const auto& idxs = per_class[cls];
        if (idxs.empty()) continue;
        any = true;
        if (idxs.size() < 3)
            throw_error(ErrorKind::Config, std::string("cannot stratify: class ") +
                                               kLabelNames[cls] + " has fewer than 3 samples");
        std::vector<int> order = idxs;
        Rng rng(derive_seed(seed, "split", static_cast<uint64_t>(cls)));
        rng.shuffle(order);
        const long n = static_cast<long>(order.size());
        const long n_val = std::max(1L, std::lround(static_cast<double>(n) * 0.1));
        const long n_test = std::max(1L, std::lround(static_cast<double>(n) * 0.1));
        const long n_train = n - n_val - n_test;
        for (long i = 0; i < n; ++i) {
            Split sp = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
            c.samples[order[i]].split = sp;
        }
    }
    if (!any) throw_error(ErrorKind::Config, "split_corpus: no labeled samples");
    return c;
}

std::vector<std::vector<int>> stratified_folds(const Corpus& c, int k, uint64_t seed) {
    if (k < 2) throw_error(ErrorKind::Config, "stratified_folds: k must be >= 2");
    std::array<std::vector<int>, kNumClasses> per_class;
    for (int i = 0; i < static_cast<int>(c.samples.size()); ++i)
        if (c.samples[i].label) per_class[static_cast<int>(*c.samples[i].label)].push_back(i);
    std::vector<std::vector<int>> folds(k);
    bool any = false;
    for (int cls = 0; cls < kNumClasses; ++cls) {
        auto order = per_class[cls];
        if (order.empty()) continue;
        any = true;
        if (static_cast<int>(order.size()) < k)
            throw_error(ErrorKind::Config, std::string("cannot stratify ") + kLabelNames[cls] +
                                               " into " + std::to_string(k) + " folds");
        Rng rng(derive_seed(seed, "folds", static_cast<uint64_t>(cls)));
        rng.shuffle(order);
        for (size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(order[i]);
    }
    if (!any) throw_error(ErrorKind::Config, "stratified_folds: no labeled samples");
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

const char* tier_name(ScaleTier t) { return kTierNames[static_cast<int>(t)]; }

std::optional<ScaleTier> parse_tier(std::string_view s) {
    const std::string v = lower(s);
    for (int i = 0; i < 4; ++i)
        if (v == kTierNames[i]) return static_cast<ScaleTier>(i);
    return std::nullopt;
}

std::vector<std::string> tier_members(const Corpus& c, ScaleTier tier, uint64_t seed) {
    std::vector<uint8_t> take(c.samples.size(), 0);
    const auto labeled = c.labeled_indices();
    const auto unlabeled = c.unlabeled_indices();
    switch (tier) {
        case ScaleTier::Small:
            for (int i : labeled) take[i] = 1;
            break;
        case ScaleTier::Medium: {
            for (int i : labeled) take[i] = 1;
            auto pick = unlabeled;
            Rng rng(derive_seed(seed, "tier-medium"));
            rng.shuffle(pick);
            pick.resize(unlabeled.size() / 2);
            for (int i : pick) take[i] = 1;
            break;
        }
        case ScaleTier::Large:
            for (int i : unlabeled) take[i] = 1;
            break;
        case ScaleTier::Turbo:
            std::fill(take.begin(), take.end(), 1);
            break;
    }
    std::vector<std::string> ids;
    for (int i = 0; i < static_cast<int>(c.samples.size()); ++i)
        if (take[i]) ids.push_back(c.samples[i].id);
    return ids;
}

void save_manifest(const Corpus& c, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot open for writing: " + path);
    for (const auto& s : c.samples) {
        nlohmann::json j;
        j["id"] = s.id;
        if (s.label) j["label"] = label_name(*s.label);
        if (s.split != Split::Unlabeled || s.label) j["split"] = split_name(s.split);
        out << j.dump() << "\n";
    }
    if (!out) throw_error(ErrorKind::Runtime, "write failed: " + path);
}

Corpus load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_error(ErrorKind::Artifact, "cannot open manifest: " + path);
    Corpus c;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw_error(ErrorKind::Parse, path + " line " + std::to_string(lineno) + ": " +
                                              e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
            throw_error(ErrorKind::Parse,
                        path + " line " + std::to_string(lineno) + ": record needs string id");
        Sample s;
        s.id = j["id"].get<std::string>();
        if (c.index.count(s.id))
            throw_error(ErrorKind::Parse, path + " line " + std::to_string(lineno) +
                                              ": duplicate id " + s.id);
        if (j.contains("label")) {
            const auto lb = parse_label(j["label"].get<std::string>());
            if (!lb)
                throw_error(ErrorKind::Parse, path + " line " + std::to_string(lineno) +
                                                  ": unknown label " +
                                                  j["label"].get<std::string>());
            s.label = *lb;
        }
        if (j.contains("split")) {
            const auto sp = parse_split(j["split"].get<std::string>());
            if (!sp)
                throw_error(ErrorKind::Parse, path + " line " + std::to_string(lineno) +
                                                  ": unknown split " +
                                                  j["split"].get<std::string>());
            s.split = *sp;
        }
        c.add(std::move(s));
    }
    return c;
}

namespace {
constexpr char kRfvMagic[8] = {'R', 'A', 'M', 'E', 'R', 'F', 'V', '1'};
constexpr uint16_t kRfvVersion = 1;
}  // namespace

void save_features(const Corpus& c, Modality m, const std::string& path) {
    io::ByteWriter w;
    w.put_bytes(kRfvMagic, 8);
    w.put_u16(kRfvVersion);
    w.put_u8(static_cast<uint8_t>(m));
    w.put_u32(static_cast<uint32_t>(c.dim(m)));
    uint64_t count = 0;
    for (const auto& s : c.samples)
        if (s.has_embedding(m)) ++count;
    w.put_u64(count);
    for (const auto& s : c.samples) {
        if (!s.has_embedding(m)) continue;
        w.put_string(s.id);
        for (float x : s.embedding(m)) w.put_f32(x);
    }
    w.write_file(path);
}

void load_features(Corpus& c, Modality m, const std::string& path) {
    io::ByteReader r(path);
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, kRfvMagic, 8) != 0) r.fail("bad magic (expected RAMERFV1)");
    const uint16_t version = r.get_u16();
    if (version != kRfvVersion) r.fail("unsupported version " + std::to_string(version));
    const uint8_t mod = r.get_u8();
    if (mod != static_cast<uint8_t>(m))
        r.fail(std::string("modality mismatch: file holds ") +
               modality_name(static_cast<Modality>(mod)) + ", expected " + modality_name(m));
    const uint32_t dim = r.get_u32();
    if (c.dim(m) != 0 && c.dim(m) != static_cast<int>(dim))
        r.fail("dim mismatch: corpus expects " + std::to_string(c.dim(m)) + ", file has " +
               std::to_string(dim));
    c.dims[static_cast<int>(m)] = static_cast<int>(dim);
    const uint64_t count = r.get_u64();
    for (uint64_t i = 0; i < count; ++i) {
        const std::string id = r.get_string();
        auto it = c.index.find(id);
        if (it == c.index.end()) r.fail("feature row id not in manifest: " + id);
        Sample& s = c.samples[it->second];
        if (s.has_embedding(m)) r.fail("duplicate feature row for id: " + id);
        std::vector<float> v(dim);
        for (uint32_t j = 0; j < dim; ++j) v[j] = r.get_f32();
        s.embeddings[static_cast<int>(m)] = std::move(v);
    }
    r.expect_end();
}

}  // namespace ramer
