#include "urbanverse/pipeline/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "urbanverse/common.hpp"

namespace uv::pipe {

namespace {

void requireChoice(const std::string& value, const std::set<std::string>& allowed,
                   const std::string& name) {
    if (!allowed.count(value)) {
        std::string msg = name + " must be one of {";
        bool first = true;
        for (const auto& a : allowed) {
            if (!first) msg += ", ";
            msg += a;
            first = false;
        }
        throw ConfigError(msg + "}, got '" + value + "'");
    }
}

}  // namespace

void RunConfig::validate() const {
    if (edgeM <= 0) throw ConfigError("edge-m must be positive");
    if (k < 1 || l < 1) throw ConfigError("k and l must be at least 1");
    if (p <= 0 || q <= 0) throw ConfigError("p and q must be positive");
    if (maskRatio < 0 || maskRatio > 1) throw ConfigError("mask-ratio must lie in [0, 1]");
    if (encLayers < 1 || decLayers < 1) throw ConfigError("layer counts must be at least 1");
    if (dim < 1 || dnDim < 1) throw ConfigError("dim and dn-dim must be positive");
    if (heads < 1 || dim % heads != 0) throw ConfigError("heads must divide dim");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
    if (pretrainEpochs < 1 || diffEpochs < 1) throw ConfigError("epoch counts must be at least 1");
    if (lrPre <= 0 || lrDiff <= 0) throw ConfigError("learning rates must be positive");
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (!(beta1 > 0) || !(betaT < 1) || beta1 > betaT) {
        throw ConfigError("beta schedule requires 0 < beta1 <= beta-t < 1");
    }
    if (retrievalK < 1) throw ConfigError("retrieval-k must be at least 1");
    if (samplingRounds < 1) throw ConfigError("sampling-rounds must be at least 1");
    if (weightDecay < 0) throw ConfigError("weight-decay cannot be negative");
    if (batchSize < 1) throw ConfigError("batch-size must be at least 1");
    if (holdout < 0 || holdout >= 1) throw ConfigError("holdout must lie in [0, 1)");
    if (threads < 0) throw ConfigError("threads cannot be negative");
    requireChoice(prior, {"retrieved", "gaussian"}, "prior");
    requireChoice(retrieval, {"topk", "random"}, "retrieval");
    requireChoice(conditioning, {"em", "concat", "xattn"}, "conditioning");
    requireChoice(head, {"diffusion", "point"}, "head");
}

std::string RunConfig::toJson() const {
    nlohmann::json j;
    j["edge_m"] = edgeM;
    j["k"] = k;
    j["l"] = l;
    j["p"] = p;
    j["q"] = q;
    j["mask_ratio"] = maskRatio;
    j["enc_layers"] = encLayers;
    j["dec_layers"] = decLayers;
    j["dim"] = dim;
    j["heads"] = heads;
    j["dropout"] = dropout;
    j["pretrain_epochs"] = pretrainEpochs;
    j["lr_pre"] = lrPre;
    j["use_positions"] = usePositions;
    j["frozen_walks"] = frozenWalks;
    j["steps"] = steps;
    j["beta1"] = beta1;
    j["beta_t"] = betaT;
    j["lr_diff"] = lrDiff;
    j["diff_epochs"] = diffEpochs;
    j["retrieval_k"] = retrievalK;
    j["sampling_rounds"] = samplingRounds;
    j["dn_dim"] = dnDim;
    j["weight_decay"] = weightDecay;
    j["median_point"] = medianPoint;
    j["prior"] = prior;
    j["retrieval"] = retrieval;
    j["conditioning"] = conditioning;
    j["head"] = head;
    j["batch_size"] = batchSize;
    j["holdout"] = holdout;
    j["threads"] = threads;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

RunConfig RunConfig::fromJson(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    try {
        c.edgeM = j.at("edge_m").get<double>();
        c.k = j.at("k").get<int>();
        c.l = j.at("l").get<int>();
        c.p = j.at("p").get<double>();
        c.q = j.at("q").get<double>();
        c.maskRatio = j.at("mask_ratio").get<double>();
        c.encLayers = j.at("enc_layers").get<int>();
        c.decLayers = j.at("dec_layers").get<int>();
        c.dim = j.at("dim").get<int>();
        c.heads = j.at("heads").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.pretrainEpochs = j.at("pretrain_epochs").get<int>();
        c.lrPre = j.at("lr_pre").get<double>();
        c.usePositions = j.at("use_positions").get<bool>();
        c.frozenWalks = j.at("frozen_walks").get<bool>();
        c.steps = j.at("steps").get<int>();
        c.beta1 = j.at("beta1").get<double>();
        c.betaT = j.at("beta_t").get<double>();
        c.lrDiff = j.at("lr_diff").get<double>();
        c.diffEpochs = j.at("diff_epochs").get<int>();
        c.retrievalK = j.at("retrieval_k").get<int>();
        c.samplingRounds = j.at("sampling_rounds").get<int>();
        c.dnDim = j.at("dn_dim").get<int>();
        c.weightDecay = j.at("weight_decay").get<double>();
        c.medianPoint = j.at("median_point").get<bool>();
        c.prior = j.at("prior").get<std::string>();
        c.retrieval = j.at("retrieval").get<std::string>();
        c.conditioning = j.at("conditioning").get<std::string>();
        c.head = j.at("head").get<std::string>();
        c.batchSize = j.at("batch_size").get<int>();
        c.holdout = j.at("holdout").get<double>();
        c.threads = j.at("threads").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is missing a field: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig loadConfigSnapshot(const std::string& dir) {
    std::string path = dir + "/config.json";
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return RunConfig::fromJson(text);
}

void saveConfigSnapshot(const std::string& dir, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::string path = dir + "/config.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << cfg.toJson();
    if (!out.flush()) throw DataError("failed writing " + path);
}

}  // namespace uv::pipe
