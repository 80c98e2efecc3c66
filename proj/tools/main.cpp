#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/io/synthetic.hpp"
#include "urbanverse/pipeline/stages.hpp"

namespace {

using uv::pipe::RunConfig;

struct Cli {
    RunConfig cfg;
    uv::io::SyntheticSpec spec;

    std::string outDir;
    std::string cityDir;
    std::string encoderDir;
    std::string embedDir;
    std::string modelDir;
    std::string embeddings;
    std::string predictions;
    std::string poisCsv, regionsJson, targetsCsv, mappingJson;
    std::vector<double> bboxVals;
    std::string regionSel = "test";
    int limitTasks = 0;
    int samples = 0;
    int newTask = -1;
    int ftEpochs = 0;
    double ftLr = 0.0;
    bool noPositions = false;
    bool svg = false;

    std::vector<CLI::Option*> seedOpts;
    CLI::Option* samplesOpt = nullptr;
    CLI::Option* medianOpt = nullptr;
    CLI::Option* ftEpochsOpt = nullptr;
    CLI::Option* ftLrOpt = nullptr;

    bool seedGiven() const {
        for (auto* o : seedOpts) {
            if (o->count() > 0) return true;
        }
        return false;
    }

    // --seed beats URBANVERSE_SEED beats the default.
    bool applyEnvSeed() {
        if (seedGiven()) return true;
        const char* env = std::getenv("URBANVERSE_SEED");
        if (!env || !*env) return false;
        char* rest = nullptr;
        unsigned long long v = std::strtoull(env, &rest, 10);
        if (rest == env || *rest != '\0') {
            throw uv::ConfigError("URBANVERSE_SEED is not an unsigned integer: '" +
                                  std::string(env) + "'");
        }
        cfg.seed = static_cast<uint64_t>(v);
        return true;
    }
};

void addOut(CLI::App* sub, Cli& c) {
    sub->add_option("--out", c.outDir, "output directory")->required();
}

void addSeed(CLI::App* sub, Cli& c) {
    c.seedOpts.push_back(sub->add_option("--seed", c.cfg.seed, "run seed"));
}

void addWalkFlags(CLI::App* sub, Cli& c) {
    sub->add_option("--edge-m", c.cfg.edgeM, "hex cell edge length in meters");
    sub->add_option("--k", c.cfg.k, "walks per root cell");
    sub->add_option("--l", c.cfg.l, "steps per walk");
    sub->add_option("--p", c.cfg.p, "walk return parameter");
    sub->add_option("--q", c.cfg.q, "walk in-out parameter");
}

void addEncoderFlags(CLI::App* sub, Cli& c) {
    sub->add_option("--mask-ratio", c.cfg.maskRatio, "masked fraction of walk positions");
    sub->add_option("--enc-layers", c.cfg.encLayers, "encoder depth");
    sub->add_option("--dec-layers", c.cfg.decLayers, "decoder depth");
    sub->add_option("--dim", c.cfg.dim, "embedding width");
    sub->add_option("--heads", c.cfg.heads, "attention heads");
    sub->add_option("--dropout", c.cfg.dropout, "dropout rate");
    sub->add_option("--pretrain-epochs", c.cfg.pretrainEpochs, "pretraining epochs");
    sub->add_option("--lr-pre", c.cfg.lrPre, "pretraining learning rate");
    sub->add_flag("--no-positions", c.noPositions, "drop the positional table");
    sub->add_flag("--frozen-walks", c.cfg.frozenWalks, "reuse one walk corpus for every epoch");
}

void addDiffusionFlags(CLI::App* sub, Cli& c) {
    sub->add_option("--steps", c.cfg.steps, "diffusion steps");
    sub->add_option("--beta1", c.cfg.beta1, "noise schedule start");
    sub->add_option("--beta-t", c.cfg.betaT, "noise schedule end");
    sub->add_option("--lr-diff", c.cfg.lrDiff, "regressor learning rate");
    sub->add_option("--diff-epochs", c.cfg.diffEpochs, "regressor training epochs");
    sub->add_option("--retrieval-k", c.cfg.retrievalK, "retrieved neighbors per prior");
    sub->add_option("--sampling-rounds", c.cfg.samplingRounds, "reverse passes per prediction");
    sub->add_option("--dn-dim", c.cfg.dnDim, "denoiser hidden width");
    sub->add_option("--weight-decay", c.cfg.weightDecay, "AdamW weight decay");
    c.medianOpt = sub->add_flag("--median-point", c.cfg.medianPoint,
                                "use the sample median as the point estimate");
    sub->add_option("--prior", c.cfg.prior, "endpoint prior: retrieved | gaussian");
    sub->add_option("--retrieval", c.cfg.retrieval, "neighbor selection: topk | random");
    sub->add_option("--conditioning", c.cfg.conditioning, "denoiser conditioning: em | concat | xattn");
    sub->add_option("--head", c.cfg.head, "regression head: diffusion | point");
}

void addRunFlags(CLI::App* sub, Cli& c) {
    sub->add_option("--batch-size", c.cfg.batchSize, "optimizer batch size");
    sub->add_option("--holdout", c.cfg.holdout, "held-out region fraction");
    sub->add_option("--threads", c.cfg.threads, "worker threads (recorded; stages run single threaded)");
    addSeed(sub, c);
}

int dispatch(int argc, char** argv) {
    Cli c;
    CLI::App app{"hex-grid city embeddings with a retrieval-conditioned diffusion regressor"};
    app.require_subcommand(1);
    auto log = [](const std::string& m) { std::cerr << m << "\n"; };

    auto* synth = app.add_subcommand("synth", "generate a synthetic city with known truth");
    addOut(synth, c);
    synth->add_option("--width", c.spec.width, "bbox width in meters");
    synth->add_option("--height", c.spec.height, "bbox height in meters");
    synth->add_option("--edge-m", c.cfg.edgeM, "hex cell edge length in meters");
    synth->add_option("--classes", c.spec.latentClasses, "latent cell classes");
    synth->add_option("--smooth-iters", c.spec.smoothIters, "field smoothing passes");
    synth->add_option("--regions-x", c.spec.regionsX, "region columns");
    synth->add_option("--regions-y", c.spec.regionsY, "region rows");
    synth->add_option("--tasks", c.spec.numTasks, "number of target tasks");
    synth->add_option("--sigma-scale", c.spec.sigmaScale, "noise sd as a fraction of target sd");
    addSeed(synth, c);
    synth->callback([&] {
        c.applyEnvSeed();
        c.spec.edge = c.cfg.edgeM;
        c.spec.seed = c.cfg.seed;
        uv::pipe::runSynth(c.outDir, c.spec, c.cfg, log);
    });

    auto* grid = app.add_subcommand("grid", "build a city directory from a raw POI dump");
    addOut(grid, c);
    grid->add_option("--pois", c.poisCsv, "pois.csv with header x,y,category")->required();
    grid->add_option("--regions", c.regionsJson, "regions.json to attach");
    grid->add_option("--targets", c.targetsCsv, "targets.csv to attach");
    grid->add_option("--mapping", c.mappingJson, "JSON mapping of category names to indices");
    grid->add_option("--bbox", c.bboxVals, "xmin ymin xmax ymax (default: POI extent plus one edge)")
        ->expected(4);
    grid->add_option("--edge-m", c.cfg.edgeM, "hex cell edge length in meters");
    grid->callback([&] {
        uv::pipe::GridArgs args;
        args.poisCsv = c.poisCsv;
        args.regionsJson = c.regionsJson;
        args.targetsCsv = c.targetsCsv;
        args.mappingJson = c.mappingJson;
        if (!c.bboxVals.empty()) {
            args.bbox = uv::grid::BBox{c.bboxVals[0], c.bboxVals[1], c.bboxVals[2], c.bboxVals[3]};
        }
        uv::pipe::runGrid(c.outDir, args, c.cfg, log);
    });

    auto* walks = app.add_subcommand("walks", "sample biased walks over the lattice for audit");
    addOut(walks, c);
    walks->add_option("--city", c.cityDir, "city directory")->required();
    addWalkFlags(walks, c);
    addRunFlags(walks, c);
    walks->callback([&] {
        c.applyEnvSeed();
        uv::pipe::runWalks(c.outDir, c.cityDir, c.cfg, log);
    });

    auto* pretrain = app.add_subcommand("pretrain", "train the masked walk reconstruction encoder");
    addOut(pretrain, c);
    pretrain->add_option("--city", c.cityDir, "city directory")->required();
    addWalkFlags(pretrain, c);
    addEncoderFlags(pretrain, c);
    addRunFlags(pretrain, c);
    pretrain->callback([&] {
        c.applyEnvSeed();
        c.cfg.usePositions = !c.noPositions;
        uv::pipe::runPretrain(c.outDir, c.cityDir, c.cfg, log);
    });

    auto* embed = app.add_subcommand("embed", "extract one embedding per cell");
    addOut(embed, c);
    embed->add_option("--city", c.cityDir, "city directory")->required();
    embed->add_option("--encoder", c.encoderDir, "pretrain output directory")->required();
    addSeed(embed, c);
    embed->callback([&] {
        c.applyEnvSeed();
        uv::pipe::runEmbed(c.outDir, c.cityDir, c.encoderDir, c.cfg, log);
    });

    auto* aggregate = app.add_subcommand("aggregate", "combine cell embeddings into region embeddings");
    addOut(aggregate, c);
    aggregate->add_option("--city", c.cityDir, "city directory")->required();
    aggregate->add_option("--embed", c.embedDir, "embed output directory")->required();
    aggregate->callback([&] { uv::pipe::runAggregate(c.outDir, c.cityDir, c.embedDir, c.cfg, log); });

    auto* train = app.add_subcommand("train", "fit the regression head on region targets");
    addOut(train, c);
    train->add_option("--city", c.cityDir, "city directory")->required();
    train->add_option("--embeddings", c.embeddings, "embeddings.csv or the aggregate directory")
        ->required();
    train->add_option("--limit-tasks", c.limitTasks, "train on the first N tasks only");
    addDiffusionFlags(train, c);
    addRunFlags(train, c);
    train->callback([&] {
        c.applyEnvSeed();
        uv::pipe::TrainArgs args;
        args.cityDir = c.cityDir;
        args.embeddings = c.embeddings;
        args.limitTasks = c.limitTasks;
        uv::pipe::runTrain(c.outDir, args, c.cfg, log);
    });

    auto* predict = app.add_subcommand("predict", "sample predictions from a trained model");
    addOut(predict, c);
    predict->add_option("--model", c.modelDir, "train output directory")->required();
    predict->add_option("--embeddings", c.embeddings, "embeddings.csv or the aggregate directory")
        ->required();
    predict->add_option("--regions", c.regionSel, "test | train | all | comma-separated ids");
    c.samplesOpt = predict->add_option("--samples", c.samples, "reverse passes per prediction");
    c.medianOpt = predict->add_flag("--median-point", c.cfg.medianPoint,
                                    "use the sample median as the point estimate");
    addSeed(predict, c);
    predict->callback([&] {
        uv::pipe::PredictArgs args;
        args.modelDir = c.modelDir;
        args.embeddings = c.embeddings;
        args.regions = c.regionSel;
        if (c.samplesOpt->count() > 0) args.samples = c.samples;
        if (c.applyEnvSeed()) args.seed = c.cfg.seed;
        if (c.medianOpt->count() > 0) args.medianPoint = true;
        uv::pipe::runPredict(c.outDir, args, log);
    });

    auto* eval = app.add_subcommand("eval", "score predictions against city targets");
    addOut(eval, c);
    eval->add_option("--predictions", c.predictions, "predictions.csv or the predict directory")
        ->required();
    eval->add_option("--city", c.cityDir, "city directory with targets.csv")->required();
    eval->add_flag("--svg", c.svg, "also draw density.svg");
    eval->callback([&] {
        uv::pipe::EvalArgs args;
        args.predictions = c.predictions;
        args.cityDir = c.cityDir;
        args.svg = c.svg;
        uv::pipe::runEval(c.outDir, args, log);
    });

    auto* ablate = app.add_subcommand("ablate", "train every ablation variant on a shared split");
    addOut(ablate, c);
    ablate->add_option("--city", c.cityDir, "city directory")->required();
    ablate->add_option("--embeddings", c.embeddings, "embeddings.csv or the aggregate directory")
        ->required();
    ablate->add_option("--limit-tasks", c.limitTasks, "use the first N tasks only");
    addDiffusionFlags(ablate, c);
    addRunFlags(ablate, c);
    ablate->callback([&] {
        c.applyEnvSeed();
        uv::pipe::TrainArgs args;
        args.cityDir = c.cityDir;
        args.embeddings = c.embeddings;
        args.limitTasks = c.limitTasks;
        uv::pipe::runAblate(c.outDir, args, c.cfg, log);
    });

    auto* finetune = app.add_subcommand("finetune", "adapt a trained model to a new task");
    addOut(finetune, c);
    finetune->add_option("--model", c.modelDir, "train output directory")->required();
    finetune->add_option("--city", c.cityDir, "city directory with the new task's targets")
        ->required();
    finetune->add_option("--embeddings", c.embeddings, "embeddings.csv or the aggregate directory")
        ->required();
    finetune->add_option("--new-task", c.newTask, "task id to adapt to (default: first unseen id)");
    c.ftEpochsOpt = finetune->add_option("--diff-epochs", c.ftEpochs, "fine-tuning epochs");
    c.ftLrOpt = finetune->add_option("--lr-diff", c.ftLr, "fine-tuning learning rate");
    addSeed(finetune, c);
    finetune->callback([&] {
        uv::pipe::FinetuneArgs args;
        args.modelDir = c.modelDir;
        args.cityDir = c.cityDir;
        args.embeddings = c.embeddings;
        args.newTask = c.newTask;
        if (c.ftEpochsOpt->count() > 0) args.epochs = c.ftEpochs;
        if (c.ftLrOpt->count() > 0) args.learningRate = c.ftLr;
        if (c.applyEnvSeed()) args.seed = c.cfg.seed;
        uv::pipe::runFinetune(c.outDir, args, log);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const uv::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const uv::ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const uv::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const uv::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
