#include "ramer/config.hpp"

#include <fstream>

#include "json.hpp"
#include "ramer/io.hpp"

namespace ramer {

using nlohmann::json;

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw_error(ErrorKind::Config, std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_error(ErrorKind::Config, "cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw_error(ErrorKind::Config, origin + ": " + e.what());
    }
    RunConfig c;
    c.seed = get_or<uint64_t>(j, "seed", 1);
    c.out_dir = get_or<std::string>(j, "out_dir", "out");

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        const std::string type = get_or<std::string>(d, "type", "synthetic");
        if (type == "synthetic") {
            c.synthetic = true;
            SyntheticConfig& s = c.synth;
            s.n_labeled = get_or<int>(d, "n_labeled", s.n_labeled);
            s.n_unlabeled = get_or<int>(d, "n_unlabeled", s.n_unlabeled);
            if (d.contains("class_priors")) {
                const auto v = d.at("class_priors").get<std::vector<double>>();
                if (v.size() != kNumClasses)
                    throw_error(ErrorKind::Config, "class_priors must have 6 entries");
                std::copy(v.begin(), v.end(), s.class_priors.begin());
            }
            if (d.contains("dims")) {
                const json& dd = d.at("dims");
                s.dims[0] = get_or<int>(dd, "audio", s.dims[0]);
                s.dims[1] = get_or<int>(dd, "video", s.dims[1]);
                s.dims[2] = get_or<int>(dd, "text", s.dims[2]);
            }
            s.latent_dim = get_or<int>(d, "latent_dim", s.latent_dim);
            s.cluster_separation = get_or<double>(d, "cluster_separation", s.cluster_separation);
            s.cross_modal_correlation =
                get_or<double>(d, "cross_modal_correlation", s.cross_modal_correlation);
            s.noise_sigma = get_or<double>(d, "noise_sigma", s.noise_sigma);
            s.label_noise_rate = get_or<double>(d, "label_noise_rate", s.label_noise_rate);
            s.seed = c.seed;
            s.validate();
        } else if (type == "files") {
            c.synthetic = false;
            c.manifest_path = get_or<std::string>(d, "manifest", "");
            if (c.manifest_path.empty())
                throw_error(ErrorKind::Config, "dataset.type=files requires a manifest path");
            if (!d.contains("features"))
                throw_error(ErrorKind::Config, "dataset.type=files requires a features object");
            const json& f = d.at("features");
            c.feature_paths[0] = get_or<std::string>(f, "audio", "");
            c.feature_paths[1] = get_or<std::string>(f, "video", "");
            c.feature_paths[2] = get_or<std::string>(f, "text", "");
            for (const auto& p : c.feature_paths)
                if (p.empty())
                    throw_error(ErrorKind::Config,
                                "dataset.features must name audio, video and text files");
        } else {
            throw_error(ErrorKind::Config, "dataset.type must be 'synthetic' or 'files'");
        }
    } else {
        c.synth.seed = c.seed;
        c.synth.validate();
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.epochs = get_or<int>(t, "epochs", c.train.epochs);
        c.train.batch_size = get_or<int>(t, "batch_size", c.train.batch_size);
        c.train.dropout = get_or<double>(t, "dropout", c.train.dropout);
        c.train.learning_rate = get_or<double>(t, "learning_rate", c.train.learning_rate);
        c.train.momentum = get_or<double>(t, "momentum", c.train.momentum);
        if (c.train.epochs < 1) throw_error(ErrorKind::Config, "train.epochs must be >= 1");
        if (c.train.batch_size < 1)
            throw_error(ErrorKind::Config, "train.batch_size must be >= 1");
        if (c.train.dropout < 0.0 || c.train.dropout >= 1.0)
            throw_error(ErrorKind::Config, "train.dropout must be in [0,1)");
    }
    c.train.seed = c.seed;

    if (j.contains("completion")) {
        const json& p = j.at("completion");
        c.completion.k = get_or<int>(p, "k", c.completion.k);
        if (c.completion.k < 1) throw_error(ErrorKind::Config, "completion.k must be >= 1");
        const std::string metric = get_or<std::string>(p, "metric", "cosine");
        if (metric == "cosine")
            c.completion.metric = kernels::Metric::Cosine;
        else if (metric == "euclidean")
            c.completion.metric = kernels::Metric::Euclidean;
        else
            throw_error(ErrorKind::Config, "completion.metric must be cosine or euclidean");
        const std::string src = get_or<std::string>(p, "db_source", "hidden");
        if (src == "hidden")
            c.completion.db_source = DbSource::Hidden;
        else if (src == "raw")
            c.completion.db_source = DbSource::Raw;
        else
            throw_error(ErrorKind::Config, "completion.db_source must be hidden or raw");
        const std::string km = get_or<std::string>(p, "keep_miss", "replace");
        if (km == "replace")
            c.completion.keep_miss = KeepMiss::Replace;
        else if (km == "avg")
            c.completion.keep_miss = KeepMiss::Average;
        else
            throw_error(ErrorKind::Config, "completion.keep_miss must be replace or avg");
        c.completion.retrieval = get_or<bool>(p, "retrieval", true);
    }

    const std::string tier = get_or<std::string>(j, "tier", "turbo");
    const auto t = parse_tier(tier);
    if (!t) throw_error(ErrorKind::Config, "unknown tier: " + tier);
    c.tier = *t;

    if (j.contains("conditions")) {
        for (const auto& code : j.at("conditions").get<std::vector<std::string>>())
            c.conditions.push_back(MissingCondition::parse(code));
    } else {
        c.conditions = MissingCondition::grid();
    }

    c.freeze_encoders = get_or<bool>(j, "freeze_encoders", false);
    c.jobs = get_or<int>(j, "jobs", 1);
    if (j.contains("cv")) {
        const json& cv = j.at("cv");
        c.cv_folds = get_or<int>(cv, "folds", 5);
        c.cv_repeats = get_or<int>(cv, "repeats", 3);
        if (c.cv_folds < 2 || c.cv_repeats < 1)
            throw_error(ErrorKind::Config, "cv.folds must be >= 2 and cv.repeats >= 1");
    }
    return c;
}

std::string RunConfig::canonical_json() const {
    json j;
    j["seed"] = seed;
    if (synthetic) {
        j["dataset"]["type"] = "synthetic";
        j["dataset"]["n_labeled"] = synth.n_labeled;
        j["dataset"]["n_unlabeled"] = synth.n_unlabeled;
        j["dataset"]["class_priors"] = synth.class_priors;
        j["dataset"]["dims"]["audio"] = synth.dims[0];
        j["dataset"]["dims"]["video"] = synth.dims[1];
        j["dataset"]["dims"]["text"] = synth.dims[2];
        j["dataset"]["latent_dim"] = synth.latent_dim;
        j["dataset"]["cluster_separation"] = synth.cluster_separation;
        j["dataset"]["cross_modal_correlation"] = synth.cross_modal_correlation;
        j["dataset"]["noise_sigma"] = synth.noise_sigma;
        j["dataset"]["label_noise_rate"] = synth.label_noise_rate;
    } else {
        j["dataset"]["type"] = "files";
        j["dataset"]["manifest"] = manifest_path;
        j["dataset"]["features"]["audio"] = feature_paths[0];
        j["dataset"]["features"]["video"] = feature_paths[1];
        j["dataset"]["features"]["text"] = feature_paths[2];
    }
    j["train"]["epochs"] = train.epochs;
    j["train"]["batch_size"] = train.batch_size;
    j["train"]["dropout"] = train.dropout;
    j["train"]["learning_rate"] = train.learning_rate;
    j["train"]["momentum"] = train.momentum;
    j["completion"]["k"] = completion.k;
    j["completion"]["metric"] =
        completion.metric == kernels::Metric::Cosine ? "cosine" : "euclidean";
    j["completion"]["db_source"] = completion.db_source == DbSource::Hidden ? "hidden" : "raw";
    j["completion"]["keep_miss"] =
        completion.keep_miss == KeepMiss::Replace ? "replace" : "avg";
    j["completion"]["retrieval"] = completion.retrieval;
    j["tier"] = tier_name(tier);
    std::vector<std::string> conds;
    for (const auto& c : conditions) conds.push_back(c.code());
    j["conditions"] = conds;
    j["freeze_encoders"] = freeze_encoders;
    j["cv"]["folds"] = cv_folds;
    j["cv"]["repeats"] = cv_repeats;
    return j.dump();  // nlohmann objects iterate in key order, so this is canonical
}

namespace {

uint64_t hash_json(const nlohmann::json& j) {
    const std::string s = j.dump();
    return io::fnv1a64(s.data(), s.size());
}

}  // namespace

uint64_t RunConfig::dataset_hash() const {
    json j = json::parse(canonical_json());
    json keep;
    keep["seed"] = j["seed"];
    keep["dataset"] = j["dataset"];
    return hash_json(keep);
}

uint64_t RunConfig::pretrain_hash() const {
    json j = json::parse(canonical_json());
    json keep;
    keep["seed"] = j["seed"];
    keep["dataset"] = j["dataset"];
    keep["train"] = j["train"];
    return hash_json(keep);
}

uint64_t RunConfig::full_hash() const {
    const std::string s = canonical_json();
    return io::fnv1a64(s.data(), s.size());
}

EvalSetup RunConfig::eval_setup() const {
    EvalSetup s;
    s.stage1 = train;
    s.stage3 = train;
    s.completion = completion;
    s.tier = tier;
    s.freeze_encoders = freeze_encoders;
    s.master_seed = seed;
    s.folds = cv_folds;
    s.repeats = cv_repeats;
    s.jobs = jobs;
    return s;
}

std::string RunConfig::manifest_file() const { return out_dir + "/corpus.manifest.jsonl"; }

std::string RunConfig::features_file(Modality m) const {
    return out_dir + "/features_" + modality_name(m) + ".rfv";
}

std::string RunConfig::checkpoint_file() const { return out_dir + "/checkpoint.rck"; }

std::string RunConfig::store_dir(StoreSource source) const {
    std::string d = out_dir + "/store_" + tier_name(tier);
    if (source == StoreSource::Raw) d += "_raw";
    return d;
}

std::string RunConfig::model_file(const MissingCondition& c) const {
    return out_dir + "/model_" + c.code() + ".rck";
}

std::string RunConfig::reports_dir() const { return out_dir + "/reports"; }

}  // namespace ramer
