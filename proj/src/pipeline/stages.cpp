#include "urbanverse/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/diffusion/model.hpp"
#include "urbanverse/encoder/cell_encoder.hpp"
#include "urbanverse/io/checkpoint.hpp"
#include "urbanverse/io/city.hpp"
#include "urbanverse/io/csv.hpp"
#include "urbanverse/metrics/kde.hpp"
#include "urbanverse/metrics/metrics.hpp"
#include "urbanverse/region/aggregate.hpp"
#include "urbanverse/walks/walks.hpp"

namespace fs = std::filesystem;

namespace uv::pipe {

namespace {

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

void ensureDir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
}

// Locates a stage artifact that may be given as a file or as the directory
// of the stage that produced it. Errors name the producing subcommand.
std::string resolveArtifact(const std::string& given, const std::string& name,
                            const std::string& producer) {
    if (given.empty()) {
        throw ConfigError("missing path to " + name + "; run `urbanverse " + producer +
                          "` and pass its output");
    }
    fs::path p(given);
    if (fs::is_directory(p)) p /= name;
    if (!fs::exists(p)) {
        throw DataError(p.string() + " not found; run `urbanverse " + producer + "` first");
    }
    return p.string();
}

std::string dirOf(const std::string& path) {
    auto parent = fs::path(path).parent_path();
    return parent.empty() ? std::string(".") : parent.string();
}

io::CityData loadCityChecked(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "grid.json")) {
        throw DataError(dir + "/grid.json not found; run `urbanverse synth` or `urbanverse grid` first");
    }
    return io::loadCity(dir);
}

void writeTextFile(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("failed writing " + path);
}

nlohmann::json readJsonFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

diff::CondMode condFrom(const std::string& s) {
    if (s == "em") return diff::CondMode::Modulate;
    if (s == "concat") return diff::CondMode::Concat;
    if (s == "xattn") return diff::CondMode::CrossAttn;
    throw ConfigError("unknown conditioning '" + s + "' (expected em, concat, or xattn)");
}

diff::PriorMode priorFrom(const std::string& s) {
    if (s == "retrieved") return diff::PriorMode::Retrieved;
    if (s == "gaussian") return diff::PriorMode::Gaussian;
    throw ConfigError("unknown prior '" + s + "' (expected retrieved or gaussian)");
}

diff::RetrievalMode retrievalFrom(const std::string& s) {
    if (s == "topk") return diff::RetrievalMode::TopK;
    if (s == "random") return diff::RetrievalMode::Random;
    throw ConfigError("unknown retrieval '" + s + "' (expected topk or random)");
}

// Progress callback that reports roughly ten times per run.
std::function<void(int, double)> epochReporter(const Logger& log, const std::string& label,
                                               int epochs) {
    if (!log) return {};
    int every = std::max(1, epochs / 10);
    return [log, label, epochs, every](int epoch, double loss) {
        if (epoch % every == 0 || epoch + 1 == epochs) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s epoch %d/%d loss %.6g", label.c_str(), epoch + 1,
                          epochs, loss);
            log(buf);
        }
    };
}

void writeLossCsv(const std::string& path, const std::vector<double>& loss) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(loss.size());
    for (size_t i = 0; i < loss.size(); ++i) {
        rows.push_back({std::to_string(i), io::formatDouble(loss[i])});
    }
    io::writeCsv(path, {"epoch", "loss"}, rows);
}

walks::CellGraph graphFor(const io::CityData& city) { return walks::CellGraph::fromCells(city.cells); }

// One feature sequence per cell; rng advances across cells in id order.
std::vector<walks::FeatureSequence> walkCorpus(const io::CityData& city, const walks::CellGraph& g,
                                               const RunConfig& cfg, num::Rng& rng,
                                               int64_t* rootRepeats) {
    std::vector<walks::FeatureSequence> corpus;
    corpus.reserve(static_cast<size_t>(city.cells.size()));
    for (int64_t id = 0; id < city.cells.size(); ++id) {
        auto seq = walks::sampleWalks(g, id, cfg.k, cfg.l, cfg.p, cfg.q, rng);
        if (rootRepeats) *rootRepeats += seq.rootRepeats;
        corpus.push_back(walks::buildFeatureSequence(seq, city.cells));
    }
    return corpus;
}

enc::EncoderConfig encoderConfigOf(const RunConfig& cfg) {
    enc::EncoderConfig ec;
    ec.k = cfg.k;
    ec.l = cfg.l;
    ec.dim = cfg.dim;
    ec.heads = cfg.heads;
    ec.encLayers = cfg.encLayers;
    ec.decLayers = cfg.decLayers;
    ec.dropout = cfg.dropout;
    ec.usePositions = cfg.usePositions;
    ec.validate();
    return ec;
}

// Per-region target vectors; only regions covering every task are usable
// for training and splitting.
struct TargetMatrix {
    int numTasks = 0;
    std::vector<int64_t> regionIds;  // complete rows, ascending
    std::map<int64_t, std::vector<double>> byRegion;
    int64_t partial = 0;
};

TargetMatrix collectTargets(const io::CityData& city, const std::string& cityDir, int limitTasks) {
    if (city.numTasks == 0) {
        throw DataError(cityDir + " has no targets; training needs targets.csv "
                        "(generate one with `urbanverse synth` or add it to the city)");
    }
    TargetMatrix tm;
    tm.numTasks = limitTasks > 0 ? std::min(limitTasks, city.numTasks) : city.numTasks;
    std::map<int64_t, std::vector<double>> acc;
    std::map<int64_t, int> seen;
    for (const auto& row : city.targets) {
        if (row.task >= tm.numTasks) continue;
        auto& v = acc[row.regionId];
        if (v.empty()) v.assign(static_cast<size_t>(tm.numTasks), 0.0);
        v[static_cast<size_t>(row.task)] = row.value;
        seen[row.regionId] += 1;
    }
    for (auto& [id, v] : acc) {
        if (seen[id] == tm.numTasks) {
            tm.regionIds.push_back(id);
            tm.byRegion.emplace(id, std::move(v));
        } else {
            tm.partial += 1;
        }
    }
    if (tm.regionIds.empty()) {
        throw DataError(cityDir + "/targets.csv has no region covering all " +
                        std::to_string(tm.numTasks) + " tasks");
    }
    return tm;
}

std::vector<diff::RepositoryEntry> makeEntries(const TargetMatrix& tm,
                                               const RegionEmbeddingTable& table,
                                               const std::vector<int64_t>& ids) {
    std::vector<diff::RepositoryEntry> entries;
    entries.reserve(ids.size());
    for (int64_t id : ids) {
        diff::RepositoryEntry e;
        e.regionId = id;
        e.h = table.row(id);
        e.targets = tm.byRegion.at(id);
        entries.push_back(std::move(e));
    }
    return entries;
}

diff::DiffusionModelT<float> buildDiffusionModel(const RunConfig& cfg, int dim, int numTasks) {
    diff::DiffusionModelT<float> m;
    m.cfg.dim = dim;
    m.cfg.dnDim = cfg.dnDim;
    m.cfg.steps = cfg.steps;
    m.cfg.numTasks = numTasks;
    m.cfg.cond = condFrom(cfg.conditioning);
    m.cfg.validate();
    m.schedule = diff::makeSchedule(cfg.steps, cfg.beta1, cfg.betaT);
    m.priorMode = priorFrom(cfg.prior);
    m.retrievalMode = retrievalFrom(cfg.retrieval);
    m.retrievalK = cfg.retrievalK;
    m.denoiser.cfg = m.cfg;
    num::Rng root(cfg.seed);
    auto initRng = root.derive("dn-init");
    m.denoiser.init(initRng);
    return m;
}

diff::DiffusionTrainConfig diffTrainConfig(const RunConfig& cfg, int onlyTask, const Logger& log,
                                           const std::string& label) {
    diff::DiffusionTrainConfig tc;
    tc.epochs = cfg.diffEpochs;
    tc.learningRate = cfg.lrDiff;
    tc.weightDecay = cfg.weightDecay;
    tc.batchSize = cfg.batchSize;
    tc.seed = cfg.seed;
    tc.onlyTask = onlyTask;
    tc.onEpoch = epochReporter(log, label, cfg.diffEpochs);
    return tc;
}

void appendRepoArrays(io::Checkpoint& ck, const diff::InfoRepository& repo) {
    int64_t n = static_cast<int64_t>(repo.size());
    io::NamedArray emb;
    emb.name = "repo.embeddings";
    emb.shape = {n, repo.dim};
    emb.data = repo.embeddings;
    ck.arrays.push_back(std::move(emb));

    io::NamedArray tg;
    tg.name = "repo.targets";
    tg.shape = {n, repo.numTasks};
    tg.data.assign(repo.normTargets.begin(), repo.normTargets.end());
    ck.arrays.push_back(std::move(tg));

    io::NamedArray mean;
    mean.name = "repo.task_mean";
    mean.shape = {repo.numTasks};
    mean.data.assign(repo.taskMean.begin(), repo.taskMean.end());
    ck.arrays.push_back(std::move(mean));

    io::NamedArray sd;
    sd.name = "repo.task_std";
    sd.shape = {repo.numTasks};
    sd.data.assign(repo.taskStd.begin(), repo.taskStd.end());
    ck.arrays.push_back(std::move(sd));
}

// Entry region ids are not stored in the payload (they live in split.json as
// exact integers); everything else comes back from the f32 arrays.
diff::InfoRepository repoFromCheckpoint(const io::Checkpoint& ck, const std::vector<int64_t>& trainIds,
                                        const std::string& path) {
    const auto& emb = ck.find("repo.embeddings");
    const auto& tg = ck.find("repo.targets");
    const auto& mean = ck.find("repo.task_mean");
    const auto& sd = ck.find("repo.task_std");
    if (emb.shape.size() != 2 || tg.shape.size() != 2 || emb.shape[0] != tg.shape[0]) {
        throw DataError(path + ": inconsistent repository arrays");
    }
    diff::InfoRepository repo;
    repo.dim = static_cast<int>(emb.shape[1]);
    repo.numTasks = static_cast<int>(tg.shape[1]);
    if (static_cast<int64_t>(trainIds.size()) != emb.shape[0]) {
        throw DataError(path + " holds " + std::to_string(emb.shape[0]) +
                        " repository rows but split.json lists " + std::to_string(trainIds.size()) +
                        " training regions");
    }
    if (mean.shape != std::vector<int64_t>{tg.shape[1]} || sd.shape != std::vector<int64_t>{tg.shape[1]}) {
        throw DataError(path + ": task stats do not match the target table");
    }
    repo.regionIds = trainIds;
    repo.embeddings = emb.data;
    repo.normTargets.assign(tg.data.begin(), tg.data.end());
    repo.taskMean.assign(mean.data.begin(), mean.data.end());
    repo.taskStd.assign(sd.data.begin(), sd.data.end());
    return repo;
}

io::Checkpoint stripRepoArrays(const io::Checkpoint& ck) {
    io::Checkpoint out;
    out.version = ck.version;
    out.component = ck.component;
    for (const auto& a : ck.arrays) {
        if (a.name.rfind("repo.", 0) != 0) out.arrays.push_back(a);
    }
    return out;
}

std::string joinInts(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(v[i]);
    }
    return s;
}

std::string joinDoubles(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ';';
        s += io::formatDouble(v[i]);
    }
    return s;
}

// Deterministic retrieval audit: one row per (region, task) with the prior
// and the neighbors behind it. Only meaningful when the prior is fixed.
void writePriorsCsv(const std::string& path, const diff::InfoRepository& repo, int retrievalK,
                    const std::vector<int64_t>& ids,
                    const std::function<std::vector<float>(int64_t)>& embOf, bool excludeSelf) {
    std::vector<std::vector<std::string>> rows;
    num::Rng unused(0);
    for (int64_t id : ids) {
        auto h = embOf(id);
        for (int u = 0; u < repo.numTasks; ++u) {
            auto prior = diff::retrievePrior(repo, h, u, retrievalK, diff::RetrievalMode::TopK,
                                             unused, excludeSelf ? id : -1);
            rows.push_back({std::to_string(id), std::to_string(u), io::formatDouble(prior.value),
                            joinInts(prior.neighbors), joinDoubles(prior.weights)});
        }
    }
    io::writeCsv(path, {"region_id", "task_id", "prior", "neighbors", "weights"}, rows);
}

void writePredictionsCsv(const std::string& path, const std::vector<diff::PredictionSet>& preds) {
    if (preds.empty()) throw DataError("no predictions to write");
    size_t s = preds[0].samples.size();
    std::vector<std::string> header = {"region_id", "task_id", "point"};
    for (size_t i = 0; i < s; ++i) header.push_back("sample_" + std::to_string(i));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(preds.size());
    for (const auto& p : preds) {
        if (p.samples.size() != s) throw ShapeError("uneven sample counts across predictions");
        std::vector<std::string> row = {std::to_string(p.regionId), std::to_string(p.task),
                                        io::formatDouble(p.point)};
        for (double v : p.samples) row.push_back(io::formatDouble(v));
        rows.push_back(std::move(row));
    }
    io::writeCsv(path, header, rows);
}

std::vector<int64_t> parseIdList(const std::string& s) {
    std::vector<int64_t> ids;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        ids.push_back(io::parseInt(item, "--regions", 0, "region id"));
    }
    if (ids.empty()) throw ConfigError("--regions list is empty");
    return ids;
}

std::vector<int64_t> selectRegions(const std::string& sel, const Split& split,
                                   const RegionEmbeddingTable& table) {
    std::vector<int64_t> ids;
    if (sel == "test") {
        ids = split.test;
        if (ids.empty()) {
            throw DataError("the training split holds no test regions; pass --regions all "
                            "or an explicit id list");
        }
    } else if (sel == "train") {
        ids = split.train;
    } else if (sel == "all") {
        ids = table.ids;
    } else {
        ids = parseIdList(sel);
    }
    for (int64_t id : ids) {
        if (!table.rowOf.count(id)) {
            throw DataError("region " + std::to_string(id) +
                            " has no row in embeddings.csv; rerun `urbanverse aggregate`");
        }
    }
    return ids;
}

// Shared tail of train/finetune: persists the model, its repository, the
// split, the loss curve, and the retrieval audit.
void saveTrainedDiffusion(const std::string& outDir, diff::DiffusionModelT<float>& model,
                          const std::vector<double>& lossCurve, const Split& split,
                          const RunConfig& cfg, const std::vector<diff::RepositoryEntry>& entries) {
    auto ck = io::paramsToCheckpoint("diffusion-head", model.denoiser.params());
    appendRepoArrays(ck, model.repo);
    io::saveCheckpoint(outDir + "/model.ckpt", ck);
    writeLossCsv(outDir + "/train-loss.csv", lossCurve);
    saveSplit(outDir + "/split.json", split, cfg.holdout, cfg.seed);
    if (model.priorMode == diff::PriorMode::Retrieved &&
        model.retrievalMode == diff::RetrievalMode::TopK) {
        std::map<int64_t, std::vector<float>> embOf;
        for (const auto& e : entries) embOf[e.regionId] = e.h;
        std::vector<int64_t> ids;
        for (const auto& e : entries) ids.push_back(e.regionId);
        writePriorsCsv(outDir + "/priors.csv", model.repo, model.retrievalK, ids,
                       [&](int64_t id) { return embOf.at(id); }, true);
    }
    saveConfigSnapshot(outDir, cfg);
}

double meanDefinedR2(const std::vector<metrics::MetricReport>& reports) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : reports) {
        if (!r.degenerateTruth) {
            sum += r.r2;
            n += 1;
        }
    }
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json metricsToJson(const std::vector<metrics::MetricReport>& reports) {
    nlohmann::json tasks = nlohmann::json::array();
    double maeSum = 0.0, rmseSum = 0.0;
    for (const auto& r : reports) {
        nlohmann::json j;
        j["task"] = r.task;
        j["n"] = r.n;
        j["mae"] = r.mae;
        j["rmse"] = r.rmse;
        if (r.degenerateTruth) {
            j["r2"] = nullptr;
            j["degenerate_truth"] = true;
        } else {
            j["r2"] = r.r2;
            j["degenerate_truth"] = false;
        }
        maeSum += r.mae;
        rmseSum += r.rmse;
        tasks.push_back(std::move(j));
    }
    nlohmann::json out;
    out["tasks"] = tasks;
    if (!reports.empty()) {
        out["mean_mae"] = maeSum / static_cast<double>(reports.size());
        out["mean_rmse"] = rmseSum / static_cast<double>(reports.size());
        double mr2 = meanDefinedR2(reports);
        if (std::isnan(mr2)) {
            out["mean_r2"] = nullptr;
        } else {
            out["mean_r2"] = mr2;
        }
    }
    return out;
}

// Minimal line-plot SVG: predicted densities solid, truth dashed.
std::string densitySvg(const std::vector<int>& taskOf, const std::vector<metrics::DensityCurve>& pred,
                       const std::vector<metrics::DensityCurve>& truth) {
    const double W = 720, H = 400, ml = 50, mr = 16, mt = 16, mb = 36;
    double xmin = 1e300, xmax = -1e300, ymax = 0;
    auto scan = [&](const metrics::DensityCurve& c) {
        for (double g : c.grid) {
            xmin = std::min(xmin, g);
            xmax = std::max(xmax, g);
        }
        for (double d : c.density) ymax = std::max(ymax, d);
    };
    for (const auto& c : pred) scan(c);
    for (const auto& c : truth) scan(c);
    if (!(xmax > xmin) || ymax <= 0) return "";
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - y / (ymax * 1.05) * (H - mt - mb); };
    const char* palette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"#444\"/>\n";
    auto poly = [&](const metrics::DensityCurve& c, const char* color, bool dashed) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
        if (dashed) svg << " stroke-dasharray=\"5 4\"";
        svg << " points=\"";
        for (size_t i = 0; i < c.grid.size(); ++i) {
            if (i) svg << ' ';
            svg << px(c.grid[i]) << ',' << py(c.density[i]);
        }
        svg << "\"/>\n";
    };
    for (size_t i = 0; i < pred.size(); ++i) {
        const char* color = palette[static_cast<size_t>(taskOf[i]) % 6];
        poly(pred[i], color, false);
        poly(truth[i], color, true);
        double ly = mt + 18.0 * static_cast<double>(i) + 12.0;
        svg << "<text x=\"" << W - mr - 170 << "\" y=\"" << ly << "\" font-family=\"sans-serif\""
            << " font-size=\"12\" fill=\"" << color << "\">task " << taskOf[i]
            << " (solid pred, dashed truth)</text>\n";
    }
    svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 10
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#444\" text-anchor=\"middle\">"
        << "target value</text>\n";
    svg << "<text x=\"14\" y=\"" << (mt + H - mb) / 2
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#444\" "
        << "transform=\"rotate(-90 14 " << (mt + H - mb) / 2 << ")\" text-anchor=\"middle\">"
        << "density</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace

std::vector<float> RegionEmbeddingTable::row(int64_t id) const {
    auto it = rowOf.find(id);
    if (it == rowOf.end()) {
        throw DataError("region " + std::to_string(id) + " has no embedding row");
    }
    const float* base = data.data() + it->second * dim;
    return std::vector<float>(base, base + dim);
}

RegionEmbeddingTable readEmbeddingsCsv(const std::string& path) {
    auto table = io::readCsv(path);
    if (table.header.size() < 2 || table.header[0] != "region_id") {
        throw DataError(path + " has an unexpected header; expected region_id,h_0,...");
    }
    RegionEmbeddingTable out;
    out.dim = static_cast<int64_t>(table.header.size()) - 1;
    for (int64_t c = 0; c < out.dim; ++c) {
        if (table.header[static_cast<size_t>(c + 1)] != "h_" + std::to_string(c)) {
            throw DataError(path + " has an unexpected header; expected region_id,h_0,...");
        }
    }
    if (table.rows.empty()) throw DataError(path + " has no rows");
    out.data.reserve(table.rows.size() * static_cast<size_t>(out.dim));
    for (size_t i = 0; i < table.rows.size(); ++i) {
        size_t line = i + 2;
        int64_t id = io::parseInt(table.rows[i][0], path, line, "region_id");
        if (!out.rowOf.emplace(id, static_cast<int64_t>(out.ids.size())).second) {
            throw DataError(path + " line " + std::to_string(line) + ": duplicate region_id " +
                            std::to_string(id));
        }
        out.ids.push_back(id);
        for (int64_t c = 0; c < out.dim; ++c) {
            out.data.push_back(static_cast<float>(io::parseDouble(
                table.rows[i][static_cast<size_t>(c + 1)], path, line, "h_" + std::to_string(c))));
        }
    }
    return out;
}

void writeEmbeddingsCsv(const std::string& path, const RegionEmbeddingTable& table) {
    std::vector<std::string> header = {"region_id"};
    for (int64_t c = 0; c < table.dim; ++c) header.push_back("h_" + std::to_string(c));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(table.ids.size());
    for (size_t i = 0; i < table.ids.size(); ++i) {
        std::vector<std::string> row = {std::to_string(table.ids[i])};
        for (int64_t c = 0; c < table.dim; ++c) {
            row.push_back(io::formatDouble(
                static_cast<double>(table.data[i * static_cast<size_t>(table.dim) +
                                               static_cast<size_t>(c)])));
        }
        rows.push_back(std::move(row));
    }
    io::writeCsv(path, header, rows);
}

Split splitRegions(std::vector<int64_t> ids, double holdout, uint64_t seed) {
    if (holdout < 0.0 || holdout >= 1.0) throw ConfigError("holdout must be in [0,1)");
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty()) throw DataError("no regions to split");
    num::Rng root(seed);
    auto rng = root.derive("split");
    rng.shuffle(ids);
    size_t nTest = static_cast<size_t>(std::llround(holdout * static_cast<double>(ids.size())));
    Split s;
    s.train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(nTest));
    s.test.assign(ids.end() - static_cast<std::ptrdiff_t>(nTest), ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

Split loadSplit(const std::string& path) {
    auto j = readJsonFile(path);
    if (!j.contains("train") || !j.contains("test")) {
        throw DataError(path + " needs train and test arrays");
    }
    Split s;
    for (const auto& v : j["train"]) s.train.push_back(v.get<int64_t>());
    for (const auto& v : j["test"]) s.test.push_back(v.get<int64_t>());
    return s;
}

void saveSplit(const std::string& path, const Split& split, double holdout, uint64_t seed) {
    nlohmann::json j;
    j["holdout"] = holdout;
    j["seed"] = seed;
    j["train"] = split.train;
    j["test"] = split.test;
    writeTextFile(path, j.dump(2) + "\n");
}

std::vector<PredictionRow> readPredictionsCsv(const std::string& path) {
    auto table = io::readCsv(path);
    std::vector<std::string> want = {"region_id", "task_id", "point"};
    if (table.header.size() < 4 ||
        !std::equal(want.begin(), want.end(), table.header.begin())) {
        throw DataError(path + " has an unexpected header; expected region_id,task_id,point,sample_0,...");
    }
    size_t s = table.header.size() - 3;
    for (size_t i = 0; i < s; ++i) {
        if (table.header[3 + i] != "sample_" + std::to_string(i)) {
            throw DataError(path + " has an unexpected header; expected region_id,task_id,point,sample_0,...");
        }
    }
    std::vector<PredictionRow> rows;
    rows.reserve(table.rows.size());
    for (size_t i = 0; i < table.rows.size(); ++i) {
        size_t line = i + 2;
        PredictionRow r;
        r.regionId = io::parseInt(table.rows[i][0], path, line, "region_id");
        r.task = static_cast<int>(io::parseInt(table.rows[i][1], path, line, "task_id"));
        r.point = io::parseDouble(table.rows[i][2], path, line, "point");
        r.samples.reserve(s);
        for (size_t c = 0; c < s; ++c) {
            r.samples.push_back(io::parseDouble(table.rows[i][3 + c], path, line,
                                                "sample_" + std::to_string(c)));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void runSynth(const std::string& outDir, const io::SyntheticSpec& spec, const RunConfig& cfg,
              const Logger& log) {
    ensureDir(outDir);
    io::generateSyntheticTo(outDir, spec);
    RunConfig snap = cfg;
    snap.edgeM = spec.edge;
    snap.seed = spec.seed;
    snap.validate();
    saveConfigSnapshot(outDir, snap);
    auto city = io::loadCity(outDir);
    say(log, "synth: " + std::to_string(city.cells.size()) + " cells, " +
                 std::to_string(city.regions.size()) + " regions, " +
                 std::to_string(city.numTasks) + " tasks -> " + outDir);
}

void runGrid(const std::string& outDir, const GridArgs& args, const RunConfig& cfg,
             const Logger& log) {
    cfg.validate();
    if (args.poisCsv.empty()) throw ConfigError("grid needs --pois");
    if (!fs::exists(args.poisCsv)) throw DataError(args.poisCsv + " not found");
    auto pois = io::loadPois(args.poisCsv, args.mappingJson);
    if (pois.empty()) throw DataError(args.poisCsv + " holds no POIs");

    grid::BBox bbox;
    if (args.bbox) {
        bbox = *args.bbox;
    } else {
        double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
        for (const auto& p : pois) {
            xmin = std::min(xmin, p.x);
            ymin = std::min(ymin, p.y);
            xmax = std::max(xmax, p.x);
            ymax = std::max(ymax, p.y);
        }
        bbox = {xmin - cfg.edgeM, ymin - cfg.edgeM, xmax + cfg.edgeM, ymax + cfg.edgeM};
    }

    auto city = io::buildCityFromPois(bbox, cfg.edgeM, pois);
    if (!args.regionsJson.empty()) {
        if (!fs::exists(args.regionsJson)) throw DataError(args.regionsJson + " not found");
        city.regions = io::loadRegions(args.regionsJson);
    }
    if (!args.targetsCsv.empty()) {
        if (!fs::exists(args.targetsCsv)) throw DataError(args.targetsCsv + " not found");
        auto tt = io::readCsv(args.targetsCsv);
        std::vector<std::string> want = {"region_id", "task_id", "value"};
        if (tt.header != want) throw DataError(args.targetsCsv + " has an unexpected header");
        for (size_t i = 0; i < tt.rows.size(); ++i) {
            size_t line = i + 2;
            io::TargetRow row;
            row.regionId = io::parseInt(tt.rows[i][0], args.targetsCsv, line, "region_id");
            row.task = static_cast<int>(io::parseInt(tt.rows[i][1], args.targetsCsv, line, "task_id"));
            row.value = io::parseDouble(tt.rows[i][2], args.targetsCsv, line, "value");
            city.targets.push_back(row);
            city.numTasks = std::max(city.numTasks, row.task + 1);
        }
    }

    ensureDir(outDir);
    io::saveCity(outDir, city);
    RunConfig snap = cfg;
    saveConfigSnapshot(outDir, snap);
    // Round-trip to apply the full schema checks to what was just written.
    auto check = io::loadCity(outDir);
    int64_t placed = 0;
    for (int64_t i = 0; i < check.cells.size(); ++i) {
        for (int64_t c : check.cells.cells[static_cast<size_t>(i)].poi) placed += c;
    }
    say(log, "grid: " + std::to_string(check.cells.size()) + " cells over [" +
                 io::formatDouble(bbox.xmin) + "," + io::formatDouble(bbox.ymin) + "]..[" +
                 io::formatDouble(bbox.xmax) + "," + io::formatDouble(bbox.ymax) + "], " +
                 std::to_string(placed) + "/" + std::to_string(pois.size()) + " POIs inside");
}

void runWalks(const std::string& outDir, const std::string& cityDir, const RunConfig& cfg,
              const Logger& log) {
    cfg.validate();
    auto city = loadCityChecked(cityDir);
    auto g = graphFor(city);
    num::Rng root(cfg.seed);
    auto rng = root.derive("walks", 0);

    std::vector<std::string> header = {"root_id", "walk"};
    for (int s = 1; s <= cfg.l; ++s) header.push_back("step_" + std::to_string(s));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<size_t>(city.cells.size()) * static_cast<size_t>(cfg.k));
    int64_t repeats = 0;
    for (int64_t id = 0; id < city.cells.size(); ++id) {
        auto seq = walks::sampleWalks(g, id, cfg.k, cfg.l, cfg.p, cfg.q, rng);
        repeats += seq.rootRepeats;
        for (int w = 0; w < cfg.k; ++w) {
            std::vector<std::string> row = {std::to_string(id), std::to_string(w)};
            for (int s = 0; s < cfg.l; ++s) {
                row.push_back(std::to_string(seq.nodes[static_cast<size_t>(1 + w * cfg.l + s)]));
            }
            rows.push_back(std::move(row));
        }
    }
    ensureDir(outDir);
    io::writeCsv(outDir + "/walks.csv", header, rows);
    saveConfigSnapshot(outDir, cfg);
    say(log, "walks: " + std::to_string(rows.size()) + " walks over " +
                 std::to_string(city.cells.size()) + " cells" +
                 (repeats > 0 ? " (" + std::to_string(repeats) + " dead-end repeats)" : ""));
}

void runPretrain(const std::string& outDir, const std::string& cityDir, const RunConfig& cfg,
                 const Logger& log) {
    cfg.validate();
    auto city = loadCityChecked(cityDir);
    auto g = graphFor(city);
    auto ec = encoderConfigOf(cfg);

    enc::EncoderParamsT<float> P;
    P.cfg = ec;
    num::Rng root(cfg.seed);
    auto initRng = root.derive("enc-init");
    P.init(initRng);

    num::Rng walkRoot(cfg.seed);
    auto corpusAt = [&](uint64_t tag) {
        auto rng = walkRoot.derive("walks", tag);
        return walkCorpus(city, g, cfg, rng, nullptr);
    };
    std::shared_ptr<std::vector<walks::FeatureSequence>> frozen;
    auto provider = [&](int epoch) {
        if (!cfg.frozenWalks) return corpusAt(static_cast<uint64_t>(epoch));
        if (!frozen) frozen = std::make_shared<std::vector<walks::FeatureSequence>>(corpusAt(0));
        return *frozen;
    };

    enc::PretrainConfig pc;
    pc.epochs = cfg.pretrainEpochs;
    pc.learningRate = cfg.lrPre;
    pc.batchSize = cfg.batchSize;
    pc.maskRatio = cfg.maskRatio;
    pc.seed = cfg.seed;
    pc.onEpoch = epochReporter(log, "pretrain", cfg.pretrainEpochs);

    auto result = enc::pretrain(P, provider, pc);

    ensureDir(outDir);
    io::saveCheckpoint(outDir + "/encoder.ckpt", io::paramsToCheckpoint("cell-encoder", P.params()));
    writeLossCsv(outDir + "/pretrain-loss.csv", result.epochLoss);
    saveConfigSnapshot(outDir, cfg);
    if (result.skippedSteps > 0) {
        say(log, "pretrain: skipped " + std::to_string(result.skippedSteps) +
                     " steps with empty masks");
    }
    say(log, "pretrain: final loss " +
                 io::formatDouble(result.epochLoss.empty() ? 0.0 : result.epochLoss.back()) +
                 " -> " + outDir + "/encoder.ckpt");
}

void runEmbed(const std::string& outDir, const std::string& cityDir, const std::string& encoderDir,
              const RunConfig& cfg, const Logger& log) {
    std::string ckPath = resolveArtifact(encoderDir, "encoder.ckpt", "pretrain");
    RunConfig encCfg = loadConfigSnapshot(dirOf(ckPath));
    auto ec = encoderConfigOf(encCfg);

    enc::EncoderParamsT<float> P;
    P.cfg = ec;
    num::Rng initRng(0);
    P.init(initRng);
    io::checkpointToParams(io::loadCheckpoint(ckPath), P.params());

    auto city = loadCityChecked(cityDir);
    auto g = graphFor(city);
    auto emb = enc::extractEmbeddings(P, city.cells, g, encCfg.p, encCfg.q, cfg.seed);

    io::Checkpoint ck;
    ck.component = "cell-embeddings";
    io::NamedArray arr;
    arr.name = "embeddings";
    arr.shape = {static_cast<int64_t>(emb.cellIds.size()), emb.dim};
    arr.data = emb.data;
    ck.arrays.push_back(std::move(arr));
    ensureDir(outDir);
    io::saveCheckpoint(outDir + "/cells-embed.ckpt", ck);

    RunConfig snap = encCfg;
    snap.seed = cfg.seed;
    saveConfigSnapshot(outDir, snap);
    say(log, "embed: " + std::to_string(emb.cellIds.size()) + " cells x " +
                 std::to_string(emb.dim) + " dims -> " + outDir + "/cells-embed.ckpt");
}

void runAggregate(const std::string& outDir, const std::string& cityDir,
                  const std::string& embedDir, const RunConfig& cfg, const Logger& log) {
    std::string ckPath = resolveArtifact(embedDir, "cells-embed.ckpt", "embed");
    auto ck = io::loadCheckpoint(ckPath);
    if (ck.component != "cell-embeddings") {
        throw DataError(ckPath + " holds '" + ck.component + "', not cell embeddings");
    }
    const auto& arr = ck.find("embeddings");
    if (arr.shape.size() != 2) throw DataError(ckPath + ": embeddings array must be 2-d");

    auto city = loadCityChecked(cityDir);
    if (arr.shape[0] != city.cells.size()) {
        throw DataError(ckPath + " holds " + std::to_string(arr.shape[0]) +
                        " cell rows but the city lattice has " + std::to_string(city.cells.size()));
    }
    if (city.regions.empty()) {
        throw DataError(cityDir + "/regions.json lists no regions; nothing to aggregate");
    }

    enc::CellEmbeddingSet cells;
    cells.dim = arr.shape[1];
    cells.data = arr.data;
    cells.cellIds.resize(static_cast<size_t>(arr.shape[0]));
    for (int64_t i = 0; i < arr.shape[0]; ++i) {
        cells.cellIds[static_cast<size_t>(i)] = i;
        cells.rowOf[i] = i;
    }

    RegionEmbeddingTable table;
    table.dim = cells.dim;
    for (const auto& region : city.regions) {
        auto weights = grid::regionCellOverlap(region, city.cells);
        auto re = region::aggregate(weights, cells);
        table.rowOf[re.regionId] = static_cast<int64_t>(table.ids.size());
        table.ids.push_back(re.regionId);
        table.data.insert(table.data.end(), re.h.begin(), re.h.end());
    }
    ensureDir(outDir);
    writeEmbeddingsCsv(outDir + "/embeddings.csv", table);
    RunConfig snap = cfg;
    snap.dim = static_cast<int>(cells.dim);
    saveConfigSnapshot(outDir, snap);
    say(log, "aggregate: " + std::to_string(table.ids.size()) + " regions x " +
                 std::to_string(table.dim) + " dims -> " + outDir + "/embeddings.csv");
}

void runTrain(const std::string& outDir, const TrainArgs& args, const RunConfig& cfg,
              const Logger& log) {
    cfg.validate();
    auto city = loadCityChecked(args.cityDir);
    auto tm = collectTargets(city, args.cityDir, args.limitTasks);
    auto table = readEmbeddingsCsv(resolveArtifact(args.embeddings, "embeddings.csv", "aggregate"));
    auto split = splitRegions(tm.regionIds, cfg.holdout, cfg.seed);
    if (split.train.size() < 2) {
        throw DataError("only " + std::to_string(split.train.size()) +
                        " training regions after the split; need at least 2");
    }
    if (tm.partial > 0) {
        say(log, "train: dropped " + std::to_string(tm.partial) +
                     " regions with incomplete task coverage");
    }
    for (int64_t id : tm.regionIds) {
        if (!table.rowOf.count(id)) {
            throw DataError("region " + std::to_string(id) +
                            " has targets but no row in embeddings.csv; rerun `urbanverse aggregate`");
        }
    }
    auto entries = makeEntries(tm, table, split.train);
    int dim = static_cast<int>(table.dim);

    RunConfig snap = cfg;
    snap.dim = dim;
    ensureDir(outDir);

    if (cfg.head == "point") {
        diff::PointBaselineT<float> pb;
        pb.dim = dim;
        pb.dnDim = cfg.dnDim;
        pb.numTasks = tm.numTasks;
        num::Rng root(cfg.seed);
        auto initRng = root.derive("pt-init");
        pb.init(initRng);
        auto tc = diffTrainConfig(cfg, -1, log, "train(point)");
        auto result = diff::trainPointBaseline(pb, entries, tc);
        auto ck = io::paramsToCheckpoint("point-head", pb.params());
        appendRepoArrays(ck, pb.repo);
        io::saveCheckpoint(outDir + "/model.ckpt", ck);
        writeLossCsv(outDir + "/train-loss.csv", result.epochLoss);
        saveSplit(outDir + "/split.json", split, cfg.holdout, cfg.seed);
        saveConfigSnapshot(outDir, snap);
        say(log, "train: point head on " + std::to_string(entries.size()) + " regions, " +
                     std::to_string(tm.numTasks) + " tasks -> " + outDir);
        return;
    }

    auto model = buildDiffusionModel(cfg, dim, tm.numTasks);
    auto tc = diffTrainConfig(cfg, -1, log, "train");
    auto result = diff::trainDiffusion(model, entries, tc);
    saveTrainedDiffusion(outDir, model, result.epochLoss, split, snap, entries);
    say(log, "train: " + std::to_string(entries.size()) + " regions, " +
                 std::to_string(tm.numTasks) + " tasks, final loss " +
                 io::formatDouble(result.epochLoss.empty() ? 0.0 : result.epochLoss.back()) +
                 " -> " + outDir);
}

void runPredict(const std::string& outDir, const PredictArgs& args, const Logger& log) {
    std::string ckPath = resolveArtifact(args.modelDir, "model.ckpt", "train");
    std::string modelDir = dirOf(ckPath);
    RunConfig cfg = loadConfigSnapshot(modelDir);
    auto ck = io::loadCheckpoint(ckPath);
    auto split = loadSplit(resolveArtifact(modelDir, "split.json", "train"));
    auto repo = repoFromCheckpoint(ck, split.train, ckPath);
    auto table = readEmbeddingsCsv(resolveArtifact(args.embeddings, "embeddings.csv", "aggregate"));
    if (table.dim != repo.dim) {
        throw DataError("embeddings.csv is " + std::to_string(table.dim) +
                        "-dimensional but the model expects " + std::to_string(repo.dim));
    }

    int samples = args.samples.value_or(cfg.samplingRounds);
    if (samples < 1) throw ConfigError("--samples must be at least 1");
    uint64_t seed = args.seed.value_or(cfg.seed);
    bool median = args.medianPoint.value_or(cfg.medianPoint);

    auto ids = selectRegions(args.regions, split, table);
    std::vector<std::vector<float>> embs;
    embs.reserve(ids.size());
    for (int64_t id : ids) embs.push_back(table.row(id));

    std::vector<diff::PredictionSet> preds;
    if (ck.component == "diffusion-head") {
        auto model = buildDiffusionModel(cfg, repo.dim, repo.numTasks);
        io::checkpointToParams(stripRepoArrays(ck), model.denoiser.params());
        model.repo = repo;
        preds = diff::predictRegions(model, ids, embs, samples, seed, median);
        ensureDir(outDir);
        if (model.priorMode == diff::PriorMode::Retrieved &&
            model.retrievalMode == diff::RetrievalMode::TopK) {
            writePriorsCsv(outDir + "/priors.csv", repo, model.retrievalK, ids,
                           [&](int64_t id) { return table.row(id); }, false);
        }
    } else if (ck.component == "point-head") {
        diff::PointBaselineT<float> pb;
        pb.dim = repo.dim;
        pb.dnDim = cfg.dnDim;
        pb.numTasks = repo.numTasks;
        num::Rng initRng(0);
        pb.init(initRng);
        io::checkpointToParams(stripRepoArrays(ck), pb.params());
        pb.repo = repo;
        preds = diff::predictPointBaseline(pb, ids, embs);
        ensureDir(outDir);
    } else {
        throw DataError(ckPath + " holds component '" + ck.component +
                        "'; predict needs a trained head from `urbanverse train`");
    }

    writePredictionsCsv(outDir + "/predictions.csv", preds);
    RunConfig snap = cfg;
    snap.samplingRounds = samples;
    snap.seed = seed;
    snap.medianPoint = median;
    saveConfigSnapshot(outDir, snap);
    say(log, "predict: " + std::to_string(ids.size()) + " regions x " +
                 std::to_string(repo.numTasks) + " tasks, " + std::to_string(samples) +
                 " samples -> " + outDir + "/predictions.csv");
}

void runEval(const std::string& outDir, const EvalArgs& args, const Logger& log) {
    std::string predPath = resolveArtifact(args.predictions, "predictions.csv", "predict");
    auto preds = readPredictionsCsv(predPath);
    if (preds.empty()) throw DataError(predPath + " has no rows");
    auto city = loadCityChecked(args.cityDir);
    if (city.numTasks == 0) {
        throw DataError(args.cityDir + " has no targets; evaluation needs targets.csv");
    }

    std::map<std::pair<int64_t, int>, double> truth;
    for (const auto& t : city.targets) truth[{t.regionId, t.task}] = t.value;

    int maxTask = 0;
    for (const auto& p : preds) maxTask = std::max(maxTask, p.task);

    std::vector<metrics::MetricReport> reports;
    std::vector<int> densityTasks;
    std::vector<metrics::DensityCurve> densityPred, densityTruth;
    size_t unmatched = 0;

    for (int u = 0; u <= maxTask; ++u) {
        std::vector<double> yhat, y, pooled;
        for (const auto& p : preds) {
            if (p.task != u) continue;
            auto it = truth.find({p.regionId, u});
            if (it == truth.end()) {
                unmatched += 1;
                continue;
            }
            yhat.push_back(p.point);
            y.push_back(it->second);
            pooled.insert(pooled.end(), p.samples.begin(), p.samples.end());
        }
        if (yhat.size() < 2) {
            say(log, "eval: task " + std::to_string(u) + " has " + std::to_string(yhat.size()) +
                         " matched predictions; skipping");
            continue;
        }
        auto report = metrics::computeMetrics(yhat, y, u);
        if (report.degenerateTruth) {
            say(log, "eval: task " + std::to_string(u) +
                         " truth has zero variance; R^2 is undefined");
        }
        reports.push_back(report);

        try {
            double bp = metrics::defaultBandwidth(pooled);
            double bt = metrics::defaultBandwidth(y);
            std::vector<double> combined = pooled;
            combined.insert(combined.end(), y.begin(), y.end());
            auto grid = metrics::coveringGrid(combined, std::max(bp, bt));
            densityTasks.push_back(u);
            densityPred.push_back(metrics::kde(pooled, bp, grid));
            densityTruth.push_back(metrics::kde(y, bt, grid));
        } catch (const DataError&) {
            say(log, "eval: task " + std::to_string(u) +
                         " has too little spread for a density curve; skipping it");
        }
    }
    if (reports.empty()) {
        throw DataError("no task had at least two predictions matching " + args.cityDir +
                        "/targets.csv");
    }
    if (unmatched > 0) {
        say(log, "eval: " + std::to_string(unmatched) + " predictions had no matching truth row");
    }

    ensureDir(outDir);
    writeTextFile(outDir + "/metrics.json", metricsToJson(reports).dump(2) + "\n");

    std::vector<std::vector<std::string>> drows;
    for (size_t i = 0; i < densityTasks.size(); ++i) {
        for (size_t gx = 0; gx < densityPred[i].grid.size(); ++gx) {
            drows.push_back({std::to_string(densityTasks[i]),
                             io::formatDouble(densityPred[i].grid[gx]),
                             io::formatDouble(densityPred[i].density[gx]),
                             io::formatDouble(densityTruth[i].density[gx])});
        }
    }
    io::writeCsv(outDir + "/density.csv", {"task_id", "y", "density_pred", "density_truth"}, drows);

    if (args.svg && !densityTasks.empty()) {
        auto svg = densitySvg(densityTasks, densityPred, densityTruth);
        if (!svg.empty()) writeTextFile(outDir + "/density.svg", svg);
    }

    // The eval directory inherits the upstream configuration when the
    // predictions came from a stage directory.
    fs::path upstreamCfg = fs::path(dirOf(predPath)) / "config.json";
    if (fs::exists(upstreamCfg)) {
        saveConfigSnapshot(outDir, loadConfigSnapshot(dirOf(predPath)));
    } else {
        saveConfigSnapshot(outDir, RunConfig{});
    }

    for (const auto& r : reports) {
        char buf[200];
        if (r.degenerateTruth) {
            std::snprintf(buf, sizeof(buf), "eval: task %d n=%zu mae=%.6g rmse=%.6g r2=undefined",
                          r.task, r.n, r.mae, r.rmse);
        } else {
            std::snprintf(buf, sizeof(buf), "eval: task %d n=%zu mae=%.6g rmse=%.6g r2=%.4f",
                          r.task, r.n, r.mae, r.rmse, r.r2);
        }
        say(log, buf);
    }
}

void runAblate(const std::string& outDir, const TrainArgs& args, const RunConfig& cfg,
               const Logger& log) {
    cfg.validate();
    auto city = loadCityChecked(args.cityDir);
    auto tm = collectTargets(city, args.cityDir, args.limitTasks);
    auto table = readEmbeddingsCsv(resolveArtifact(args.embeddings, "embeddings.csv", "aggregate"));
    auto split = splitRegions(tm.regionIds, cfg.holdout, cfg.seed);
    if (split.train.size() < 2 || split.test.empty()) {
        throw DataError("ablation needs a non-trivial split; got " +
                        std::to_string(split.train.size()) + " train / " +
                        std::to_string(split.test.size()) + " test regions");
    }
    for (int64_t id : tm.regionIds) {
        if (!table.rowOf.count(id)) {
            throw DataError("region " + std::to_string(id) +
                            " has targets but no row in embeddings.csv; rerun `urbanverse aggregate`");
        }
    }
    auto entries = makeEntries(tm, table, split.train);
    int dim = static_cast<int>(table.dim);

    std::vector<std::vector<float>> testEmb;
    for (int64_t id : split.test) testEmb.push_back(table.row(id));

    struct Variant {
        std::string name;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    variants.push_back({"full", cfg});
    {
        RunConfig c = cfg;
        c.prior = "gaussian";
        variants.push_back({"gaussian-prior", c});
    }
    {
        RunConfig c = cfg;
        c.retrieval = "random";
        variants.push_back({"random-retrieval", c});
    }
    {
        RunConfig c = cfg;
        c.conditioning = "concat";
        variants.push_back({"concat-conditioning", c});
    }
    {
        RunConfig c = cfg;
        c.conditioning = "xattn";
        variants.push_back({"xattn-conditioning", c});
    }
    {
        RunConfig c = cfg;
        c.head = "point";
        variants.push_back({"point-head", c});
    }

    std::vector<std::vector<std::string>> rows;
    nlohmann::json jvariants = nlohmann::json::array();
    for (const auto& variant : variants) {
        const RunConfig& vc = variant.cfg;
        std::vector<diff::PredictionSet> preds;
        if (vc.head == "point") {
            diff::PointBaselineT<float> pb;
            pb.dim = dim;
            pb.dnDim = vc.dnDim;
            pb.numTasks = tm.numTasks;
            num::Rng root(vc.seed);
            auto initRng = root.derive("pt-init");
            pb.init(initRng);
            auto tc = diffTrainConfig(vc, -1, {}, variant.name);
            diff::trainPointBaseline(pb, entries, tc);
            preds = diff::predictPointBaseline(pb, split.test, testEmb);
        } else {
            auto model = buildDiffusionModel(vc, dim, tm.numTasks);
            auto tc = diffTrainConfig(vc, -1, {}, variant.name);
            diff::trainDiffusion(model, entries, tc);
            preds = diff::predictRegions(model, split.test, testEmb, vc.samplingRounds, vc.seed,
                                         vc.medianPoint);
        }

        std::vector<metrics::MetricReport> reports;
        for (int u = 0; u < tm.numTasks; ++u) {
            std::vector<double> yhat, y;
            for (const auto& p : preds) {
                if (p.task != u) continue;
                yhat.push_back(p.point);
                y.push_back(tm.byRegion.at(p.regionId)[static_cast<size_t>(u)]);
            }
            reports.push_back(metrics::computeMetrics(yhat, y, u));
        }
        nlohmann::json jv;
        jv["variant"] = variant.name;
        jv["metrics"] = metricsToJson(reports);
        jvariants.push_back(std::move(jv));
        for (const auto& r : reports) {
            rows.push_back({variant.name, std::to_string(r.task), std::to_string(r.n),
                            io::formatDouble(r.mae), io::formatDouble(r.rmse),
                            r.degenerateTruth ? "nan" : io::formatDouble(r.r2)});
        }
        double mr2 = meanDefinedR2(reports);
        char buf[120];
        std::snprintf(buf, sizeof(buf), "ablate: %-19s mean r2 %.4f", variant.name.c_str(), mr2);
        say(log, buf);
    }

    ensureDir(outDir);
    io::writeCsv(outDir + "/ablation.csv", {"variant", "task", "n", "mae", "rmse", "r2"}, rows);
    nlohmann::json j;
    j["variants"] = jvariants;
    writeTextFile(outDir + "/ablation.json", j.dump(2) + "\n");
    saveConfigSnapshot(outDir, cfg);
}

void runFinetune(const std::string& outDir, const FinetuneArgs& args, const Logger& log) {
    std::string ckPath = resolveArtifact(args.modelDir, "model.ckpt", "train");
    std::string modelDir = dirOf(ckPath);
    RunConfig cfg = loadConfigSnapshot(modelDir);
    auto ck = io::loadCheckpoint(ckPath);
    if (ck.component != "diffusion-head") {
        throw DataError(ckPath + " holds component '" + ck.component +
                        "'; finetune needs a diffusion model from `urbanverse train`");
    }
    int oldTasks = static_cast<int>(ck.find("repo.task_mean").shape[0]);

    if (args.epochs) cfg.diffEpochs = *args.epochs;
    if (args.learningRate) cfg.lrDiff = *args.learningRate;
    if (args.seed) cfg.seed = *args.seed;
    cfg.validate();

    auto city = loadCityChecked(args.cityDir);
    auto tm = collectTargets(city, args.cityDir, 0);
    int newTask = args.newTask >= 0 ? args.newTask : oldTasks;
    if (newTask >= tm.numTasks) {
        throw DataError("task " + std::to_string(newTask) + " has no targets in " + args.cityDir +
                        " (found " + std::to_string(tm.numTasks) + " tasks)");
    }
    if (tm.numTasks < oldTasks) {
        throw DataError(args.cityDir + " covers " + std::to_string(tm.numTasks) +
                        " tasks but the checkpoint was trained on " + std::to_string(oldTasks));
    }
    auto table = readEmbeddingsCsv(resolveArtifact(args.embeddings, "embeddings.csv", "aggregate"));
    if (static_cast<int>(table.dim) != cfg.dim) {
        throw DataError("embeddings.csv is " + std::to_string(table.dim) +
                        "-dimensional but the model expects " + std::to_string(cfg.dim));
    }
    auto split = splitRegions(tm.regionIds, cfg.holdout, cfg.seed);
    if (split.train.size() < 2) {
        throw DataError("only " + std::to_string(split.train.size()) +
                        " training regions after the split; need at least 2");
    }
    for (int64_t id : tm.regionIds) {
        if (!table.rowOf.count(id)) {
            throw DataError("region " + std::to_string(id) +
                            " has targets but no row in embeddings.csv; rerun `urbanverse aggregate`");
        }
    }
    auto entries = makeEntries(tm, table, split.train);

    // Old weights restore into an old-shaped parameter set first; the new
    // model then takes them over, keeping freshly seeded rows for new tasks.
    auto model = buildDiffusionModel(cfg, cfg.dim, tm.numTasks);
    {
        diff::DenoiserParamsT<float> old;
        old.cfg = model.cfg;
        old.cfg.numTasks = oldTasks;
        num::Rng tmpRng(0);
        old.init(tmpRng);
        io::checkpointToParams(stripRepoArrays(ck), old.params());
        auto src = old.params();
        auto dst = model.denoiser.params();
        if (src.size() != dst.size()) throw ShapeError("parameter registries diverge");
        for (size_t i = 0; i < src.size(); ++i) {
            if (src[i].name != dst[i].name) throw ShapeError("parameter registries diverge");
            auto& from = src[i].tensor.value();
            auto& to = dst[i].tensor.value();
            if (src[i].name == "u_embed") {
                size_t width = static_cast<size_t>(model.cfg.dnDim);
                std::copy(from.begin(), from.begin() + static_cast<std::ptrdiff_t>(
                              static_cast<size_t>(oldTasks) * width), to.begin());
            } else {
                if (from.size() != to.size()) {
                    throw ShapeError("checkpoint array " + src[i].name + " changed shape");
                }
                std::copy(from.begin(), from.end(), to.begin());
            }
        }
    }

    auto tc = diffTrainConfig(cfg, newTask, log, "finetune");
    auto result = diff::trainDiffusion(model, entries, tc);
    ensureDir(outDir);
    saveTrainedDiffusion(outDir, model, result.epochLoss, split, cfg, entries);
    say(log, "finetune: task " + std::to_string(newTask) + " on " +
                 std::to_string(entries.size()) + " regions, final loss " +
                 io::formatDouble(result.epochLoss.empty() ? 0.0 : result.epochLoss.back()) +
                 " -> " + outDir);
}

}  // namespace uv::pipe
