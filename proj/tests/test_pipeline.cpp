#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/io/checkpoint.hpp"
#include "urbanverse/io/city.hpp"
#include "urbanverse/io/synthetic.hpp"
#include "urbanverse/pipeline/config.hpp"
#include "urbanverse/pipeline/stages.hpp"

using namespace uv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("uvpipe-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string readText(const std::string& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool sameBytes(const std::string& a, const std::string& b) { return readText(a) == readText(b); }

// Desk-sized configuration that keeps a full pipeline run under a second.
pipe::RunConfig tinyConfig() {
    pipe::RunConfig cfg;
    cfg.k = 3;
    cfg.l = 2;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.encLayers = 1;
    cfg.decLayers = 1;
    cfg.pretrainEpochs = 2;
    cfg.lrPre = 1e-3;
    cfg.steps = 8;
    cfg.diffEpochs = 25;
    cfg.dnDim = 16;
    cfg.retrievalK = 3;
    cfg.samplingRounds = 4;
    cfg.holdout = 0.25;
    cfg.batchSize = 16;
    return cfg;
}

io::SyntheticSpec tinySpec() {
    io::SyntheticSpec spec;
    spec.width = 1500;
    spec.height = 1500;
    spec.regionsX = 4;
    spec.regionsY = 4;
    spec.latentClasses = 3;
    spec.numTasks = 2;
    spec.seed = 0;
    return spec;
}

// Builds city -> encoder -> cell embeddings -> region embeddings once; the
// heavier stage tests all start from this directory layout.
const TempDir& pipelineFixture() {
    static TempDir dir;
    static bool built = false;
    if (!built) {
        auto cfg = tinyConfig();
        pipe::runSynth(dir.sub("city"), tinySpec(), cfg);
        pipe::runPretrain(dir.sub("enc"), dir.sub("city"), cfg);
        pipe::runEmbed(dir.sub("emb"), dir.sub("city"), dir.sub("enc"), cfg);
        pipe::runAggregate(dir.sub("agg"), dir.sub("city"), dir.sub("emb"), cfg);
        built = true;
    }
    return dir;
}

}  // namespace

TEST_CASE("run configuration survives a json round trip") {
    pipe::RunConfig cfg;
    cfg.edgeM = 120.0;
    cfg.k = 5;
    cfg.l = 3;
    cfg.p = 2.0;
    cfg.q = 0.5;
    cfg.maskRatio = 0.25;
    cfg.encLayers = 2;
    cfg.decLayers = 2;
    cfg.dim = 32;
    cfg.heads = 8;
    cfg.dropout = 0.05;
    cfg.pretrainEpochs = 7;
    cfg.lrPre = 3e-4;
    cfg.usePositions = false;
    cfg.frozenWalks = true;
    cfg.steps = 42;
    cfg.beta1 = 2e-4;
    cfg.betaT = 0.015;
    cfg.lrDiff = 1e-3;
    cfg.diffEpochs = 11;
    cfg.retrievalK = 9;
    cfg.samplingRounds = 6;
    cfg.dnDim = 24;
    cfg.weightDecay = 0.02;
    cfg.medianPoint = true;
    cfg.prior = "gaussian";
    cfg.retrieval = "random";
    cfg.conditioning = "xattn";
    cfg.head = "point";
    cfg.batchSize = 17;
    cfg.holdout = 0.3;
    cfg.threads = 2;
    cfg.seed = 99;

    auto back = pipe::RunConfig::fromJson(cfg.toJson());
    CHECK(back.edgeM == cfg.edgeM);
    CHECK(back.k == cfg.k);
    CHECK(back.l == cfg.l);
    CHECK(back.p == cfg.p);
    CHECK(back.q == cfg.q);
    CHECK(back.maskRatio == cfg.maskRatio);
    CHECK(back.encLayers == cfg.encLayers);
    CHECK(back.decLayers == cfg.decLayers);
    CHECK(back.dim == cfg.dim);
    CHECK(back.heads == cfg.heads);
    CHECK(back.dropout == cfg.dropout);
    CHECK(back.pretrainEpochs == cfg.pretrainEpochs);
    CHECK(back.lrPre == cfg.lrPre);
    CHECK(back.usePositions == cfg.usePositions);
    CHECK(back.frozenWalks == cfg.frozenWalks);
    CHECK(back.steps == cfg.steps);
    CHECK(back.beta1 == cfg.beta1);
    CHECK(back.betaT == cfg.betaT);
    CHECK(back.lrDiff == cfg.lrDiff);
    CHECK(back.diffEpochs == cfg.diffEpochs);
    CHECK(back.retrievalK == cfg.retrievalK);
    CHECK(back.samplingRounds == cfg.samplingRounds);
    CHECK(back.dnDim == cfg.dnDim);
    CHECK(back.weightDecay == cfg.weightDecay);
    CHECK(back.medianPoint == cfg.medianPoint);
    CHECK(back.prior == cfg.prior);
    CHECK(back.retrieval == cfg.retrieval);
    CHECK(back.conditioning == cfg.conditioning);
    CHECK(back.head == cfg.head);
    CHECK(back.batchSize == cfg.batchSize);
    CHECK(back.holdout == cfg.holdout);
    CHECK(back.threads == cfg.threads);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("run configuration validation rejects bad values") {
    pipe::RunConfig cfg;
    cfg.prior = "sometimes";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.heads = 5;  // 144 % 5 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = {};
    cfg.holdout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    CHECK_THROWS_AS(pipe::RunConfig::fromJson("{\"k\": 3}"), ConfigError);
    CHECK_THROWS_AS(pipe::RunConfig::fromJson("not json"), ConfigError);
}

TEST_CASE("region split partitions deterministically") {
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < 40; ++i) ids.push_back(i * 3);

    auto s1 = pipe::splitRegions(ids, 0.2, 11);
    auto s2 = pipe::splitRegions(ids, 0.2, 11);
    CHECK(s1.train == s2.train);
    CHECK(s1.test == s2.test);
    CHECK(s1.test.size() == 8);
    CHECK(s1.train.size() == 32);

    std::vector<int64_t> all = s1.train;
    all.insert(all.end(), s1.test.begin(), s1.test.end());
    std::sort(all.begin(), all.end());
    CHECK(all == ids);

    auto s3 = pipe::splitRegions(ids, 0.2, 12);
    CHECK(s3.test != s1.test);

    auto none = pipe::splitRegions(ids, 0.0, 11);
    CHECK(none.test.empty());
    CHECK(none.train.size() == ids.size());

    CHECK_THROWS_AS(pipe::splitRegions(ids, 1.0, 0), ConfigError);
    CHECK_THROWS_AS(pipe::splitRegions({}, 0.2, 0), DataError);
}

TEST_CASE("split json round trips") {
    TempDir dir;
    pipe::Split s;
    s.train = {1, 5, 9};
    s.test = {3, 7};
    pipe::saveSplit(dir.sub("split.json"), s, 0.4, 123);
    auto back = pipe::loadSplit(dir.sub("split.json"));
    CHECK(back.train == s.train);
    CHECK(back.test == s.test);

    std::ofstream(dir.sub("bad.json")) << "{\"train\": [1]}";
    CHECK_THROWS_AS(pipe::loadSplit(dir.sub("bad.json")), DataError);
}

TEST_CASE("embeddings csv round trips and rejects malformed input") {
    TempDir dir;
    pipe::RegionEmbeddingTable table;
    table.dim = 3;
    table.ids = {4, 2, 10};
    table.data = {1.0f, -2.5f, 0.125f, 3.0f, 4.0f, 5.0f, -0.0625f, 7.5f, 9.0f};
    for (size_t i = 0; i < table.ids.size(); ++i) table.rowOf[table.ids[i]] = static_cast<int64_t>(i);

    pipe::writeEmbeddingsCsv(dir.sub("embeddings.csv"), table);
    auto back = pipe::readEmbeddingsCsv(dir.sub("embeddings.csv"));
    CHECK(back.dim == 3);
    CHECK(back.ids == table.ids);
    CHECK(back.data == table.data);
    CHECK(back.row(10) == std::vector<float>{-0.0625f, 7.5f, 9.0f});
    CHECK_THROWS_AS(back.row(99), DataError);

    std::ofstream(dir.sub("dup.csv")) << "region_id,h_0\n1,0.5\n1,0.6\n";
    CHECK_THROWS_WITH_AS(pipe::readEmbeddingsCsv(dir.sub("dup.csv")),
                         doctest::Contains("duplicate region_id"), DataError);

    std::ofstream(dir.sub("hdr.csv")) << "region,h_0\n1,0.5\n";
    CHECK_THROWS_AS(pipe::readEmbeddingsCsv(dir.sub("hdr.csv")), DataError);
}

TEST_CASE("predictions csv reader checks its header") {
    TempDir dir;
    std::ofstream(dir.sub("p.csv")) << "region_id,task_id,point,sample_0,sample_1\n"
                                    << "7,0,1.5,1.25,1.75\n";
    auto rows = pipe::readPredictionsCsv(dir.sub("p.csv"));
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].regionId == 7);
    CHECK(rows[0].task == 0);
    CHECK(rows[0].point == 1.5);
    CHECK(rows[0].samples == std::vector<double>{1.25, 1.75});

    std::ofstream(dir.sub("bad.csv")) << "region_id,task_id,point\n7,0,1.5\n";
    CHECK_THROWS_AS(pipe::readPredictionsCsv(dir.sub("bad.csv")), DataError);
}

TEST_CASE("pipeline stages produce their artifacts end to end") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();

    for (const char* d : {"city", "enc", "emb", "agg"}) {
        CHECK(fs::exists(fs::path(fx.sub(d)) / "config.json"));
    }
    CHECK(fs::exists(fx.sub("enc") + "/encoder.ckpt"));
    CHECK(fs::exists(fx.sub("enc") + "/pretrain-loss.csv"));
    CHECK(fs::exists(fx.sub("emb") + "/cells-embed.ckpt"));

    auto table = pipe::readEmbeddingsCsv(fx.sub("agg") + "/embeddings.csv");
    CHECK(table.dim == 16);
    CHECK(table.ids.size() == 16);

    TempDir out;
    pipe::runTrain(out.sub("model"), {fx.sub("city"), fx.sub("agg"), 0}, cfg);
    CHECK(fs::exists(out.sub("model") + "/model.ckpt"));
    CHECK(fs::exists(out.sub("model") + "/split.json"));
    CHECK(fs::exists(out.sub("model") + "/train-loss.csv"));
    CHECK(fs::exists(out.sub("model") + "/priors.csv"));

    auto split = pipe::loadSplit(out.sub("model") + "/split.json");
    CHECK(split.train.size() == 12);
    CHECK(split.test.size() == 4);

    pipe::PredictArgs pa;
    pa.modelDir = out.sub("model");
    pa.embeddings = fx.sub("agg");
    pipe::runPredict(out.sub("pred"), pa);
    auto preds = pipe::readPredictionsCsv(out.sub("pred") + "/predictions.csv");
    CHECK(preds.size() == split.test.size() * 2);  // two tasks
    for (const auto& p : preds) {
        CHECK(p.samples.size() == 4);
        bool inTest = std::find(split.test.begin(), split.test.end(), p.regionId) != split.test.end();
        CHECK(inTest);
    }

    pipe::EvalArgs ea;
    ea.predictions = out.sub("pred");
    ea.cityDir = fx.sub("city");
    ea.svg = true;
    pipe::runEval(out.sub("ev"), ea);
    auto mj = nlohmann::json::parse(readText(out.sub("ev") + "/metrics.json"));
    REQUIRE(mj["tasks"].size() == 2);
    CHECK(mj["tasks"][0]["n"].get<int>() == 4);
    CHECK(mj.contains("mean_r2"));
    CHECK(fs::exists(out.sub("ev") + "/density.csv"));
    CHECK(fs::exists(out.sub("ev") + "/density.svg"));
}

TEST_CASE("prediction honors explicit region lists and sampling overrides") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();
    TempDir out;
    pipe::runTrain(out.sub("model"), {fx.sub("city"), fx.sub("agg"), 0}, cfg);

    pipe::PredictArgs pa;
    pa.modelDir = out.sub("model");
    pa.embeddings = fx.sub("agg");
    pa.regions = "3,8";
    pa.samples = 2;
    pipe::runPredict(out.sub("pred"), pa);
    auto preds = pipe::readPredictionsCsv(out.sub("pred") + "/predictions.csv");
    CHECK(preds.size() == 4);  // 2 regions x 2 tasks
    CHECK(preds[0].samples.size() == 2);

    pa.regions = "all";
    pipe::runPredict(out.sub("pred-all"), pa);
    CHECK(pipe::readPredictionsCsv(out.sub("pred-all") + "/predictions.csv").size() == 32);

    pa.regions = "123";
    CHECK_THROWS_WITH_AS(pipe::runPredict(out.sub("pred-bad"), pa),
                         doctest::Contains("no row in embeddings.csv"), DataError);
}

TEST_CASE("stage reruns are byte identical") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();

    TempDir out;
    pipe::runEmbed(out.sub("emb2"), fx.sub("city"), fx.sub("enc"), cfg);
    CHECK(sameBytes(out.sub("emb2") + "/cells-embed.ckpt", fx.sub("emb") + "/cells-embed.ckpt"));

    pipe::runAggregate(out.sub("agg2"), fx.sub("city"), out.sub("emb2"), cfg);
    CHECK(sameBytes(out.sub("agg2") + "/embeddings.csv", fx.sub("agg") + "/embeddings.csv"));

    pipe::runTrain(out.sub("m1"), {fx.sub("city"), fx.sub("agg"), 0}, cfg);
    pipe::runTrain(out.sub("m2"), {fx.sub("city"), fx.sub("agg"), 0}, cfg);
    CHECK(sameBytes(out.sub("m1") + "/model.ckpt", out.sub("m2") + "/model.ckpt"));
    CHECK(sameBytes(out.sub("m1") + "/train-loss.csv", out.sub("m2") + "/train-loss.csv"));

    pipe::PredictArgs pa;
    pa.modelDir = out.sub("m1");
    pa.embeddings = fx.sub("agg");
    pipe::runPredict(out.sub("p1"), pa);
    pipe::runPredict(out.sub("p2"), pa);
    CHECK(sameBytes(out.sub("p1") + "/predictions.csv", out.sub("p2") + "/predictions.csv"));
}

TEST_CASE("missing upstream artifacts name the stage that makes them") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();
    TempDir out;

    CHECK_THROWS_WITH_AS(pipe::runEmbed(out.sub("x"), fx.sub("city"), out.sub("void"), cfg),
                         doctest::Contains("urbanverse pretrain"), DataError);
    CHECK_THROWS_WITH_AS(pipe::runAggregate(out.sub("x"), fx.sub("city"), out.sub("void"), cfg),
                         doctest::Contains("urbanverse embed"), DataError);
    CHECK_THROWS_WITH_AS(pipe::runTrain(out.sub("x"), {fx.sub("city"), out.sub("void"), 0}, cfg),
                         doctest::Contains("urbanverse aggregate"), DataError);
    pipe::PredictArgs pa;
    pa.modelDir = out.sub("void");
    pa.embeddings = fx.sub("agg");
    CHECK_THROWS_WITH_AS(pipe::runPredict(out.sub("x"), pa),
                         doctest::Contains("urbanverse train"), DataError);
    pipe::EvalArgs ea;
    ea.predictions = out.sub("void");
    ea.cityDir = fx.sub("city");
    CHECK_THROWS_WITH_AS(pipe::runEval(out.sub("x"), ea),
                         doctest::Contains("urbanverse predict"), DataError);
    CHECK_THROWS_WITH_AS(pipe::runPretrain(out.sub("x"), out.sub("void"), cfg),
                         doctest::Contains("urbanverse synth"), DataError);
}

TEST_CASE("finetune grows the task table and keeps old weights") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();
    TempDir out;

    pipe::runTrain(out.sub("base"), {fx.sub("city"), fx.sub("agg"), 1}, cfg);
    auto baseCk = io::loadCheckpoint(out.sub("base") + "/model.ckpt");
    CHECK(baseCk.find("u_embed").shape == std::vector<int64_t>{1, 16});

    pipe::FinetuneArgs fa;
    fa.modelDir = out.sub("base");
    fa.cityDir = fx.sub("city");
    fa.embeddings = fx.sub("agg");
    fa.epochs = 10;
    pipe::runFinetune(out.sub("ft"), fa);

    auto ftCk = io::loadCheckpoint(out.sub("ft") + "/model.ckpt");
    CHECK(ftCk.find("u_embed").shape == std::vector<int64_t>{2, 16});
    CHECK(ftCk.find("repo.task_mean").shape == std::vector<int64_t>{2});

    pipe::PredictArgs pa;
    pa.modelDir = out.sub("ft");
    pa.embeddings = fx.sub("agg");
    pipe::runPredict(out.sub("pred"), pa);
    auto preds = pipe::readPredictionsCsv(out.sub("pred") + "/predictions.csv");
    int tasksSeen = 0;
    for (const auto& p : preds) tasksSeen = std::max(tasksSeen, p.task + 1);
    CHECK(tasksSeen == 2);

    // With a vanishing learning rate the single step cannot move anything at
    // f32 resolution, so the checkpoint exposes the warm-start copy directly.
    fa.newTask = 1;
    fa.epochs = 1;
    fa.learningRate = 1e-12;
    pipe::runFinetune(out.sub("ft1"), fa);
    auto ck1 = io::loadCheckpoint(out.sub("ft1") + "/model.ckpt");
    for (const auto& arr : baseCk.arrays) {
        if (arr.name.rfind("repo.", 0) == 0) continue;
        auto& restored = ck1.find(arr.name);
        if (arr.name == "u_embed") {
            for (size_t i = 0; i < arr.data.size(); ++i) CHECK(restored.data[i] == arr.data[i]);
            CHECK(restored.data.size() == 2 * arr.data.size());
        } else {
            CHECK(restored.data == arr.data);
        }
    }
}

TEST_CASE("ablation table covers every variant") {
    const auto& fx = pipelineFixture();
    auto cfg = tinyConfig();
    cfg.diffEpochs = 6;
    cfg.samplingRounds = 2;
    TempDir out;
    pipe::runAblate(out.sub("abl"), {fx.sub("city"), fx.sub("agg"), 0}, cfg);

    auto aj = nlohmann::json::parse(readText(out.sub("abl") + "/ablation.json"));
    std::vector<std::string> want = {"full", "gaussian-prior", "random-retrieval",
                                     "concat-conditioning", "xattn-conditioning", "point-head"};
    REQUIRE(aj["variants"].size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(aj["variants"][i]["variant"].get<std::string>() == want[i]);
        CHECK(aj["variants"][i]["metrics"]["tasks"].size() == 2);
    }
    CHECK(fs::exists(out.sub("abl") + "/ablation.csv"));
}

#ifdef UV_CLI_PATH
TEST_CASE("cli wires the stages together") {
    TempDir dir;
    std::string cli = UV_CLI_PATH;
    auto run = [&](const std::string& args) {
        std::string cmd = cli + " " + args + " >/dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    int rc = run("synth --out " + dir.sub("city") +
                 " --width 1200 --height 1200 --regions-x 3 --regions-y 3 --tasks 2 --seed 1");
    REQUIRE(rc == 0);
    CHECK(fs::exists(dir.sub("city") + "/cells.csv"));

    rc = run("walks --out " + dir.sub("w") + " --city " + dir.sub("city") + " --k 2 --l 2");
    CHECK(rc == 0);
    CHECK(fs::exists(dir.sub("w") + "/walks.csv"));

    rc = run("walks --out " + dir.sub("w2") + " --city " + dir.sub("void"));
    CHECK(rc / 256 == 3);  // missing city data

    rc = run("train --out " + dir.sub("m") + " --city " + dir.sub("city") + " --embeddings " +
             dir.sub("void") + " --prior nonsense");
    CHECK(rc / 256 == 2);  // config error beats the missing artifact
}
#endif
