#include "nol/experiment.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "nol/checkpoint.hpp"
#include "nol/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nol {

Scenario scenario_from_string(const std::string& s) {
    if (s == "sgd") return Scenario::Sgd;
    if (s == "nol") return Scenario::Nol;
    if (s == "sgd_ens") return Scenario::SgdEns;
    if (s == "nol_ens") return Scenario::NolEns;
    if (s == "sgd_pgd") return Scenario::SgdPgd;
    if (s == "nol_pgd") return Scenario::NolPgd;
    throw std::invalid_argument("scenario: unknown value '" + s +
                                "' (want sgd|nol|sgd_ens|nol_ens|sgd_pgd|nol_pgd)");
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::Sgd: return "sgd";
        case Scenario::Nol: return "nol";
        case Scenario::SgdEns: return "sgd_ens";
        case Scenario::NolEns: return "nol_ens";
        case Scenario::SgdPgd: return "sgd_pgd";
        case Scenario::NolPgd: return "nol_pgd";
    }
    return "?";
}

bool scenario_uses_noise(Scenario s) {
    return s == Scenario::Nol || s == Scenario::NolEns || s == Scenario::NolPgd;
}
bool scenario_is_ens(Scenario s) { return s == Scenario::SgdEns || s == Scenario::NolEns; }
bool scenario_is_pgd(Scenario s) { return s == Scenario::SgdPgd || s == Scenario::NolPgd; }

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void ExperimentConfig::validate() const {
    train.validate();
    if (architecture != "convnet1" && architecture != "convnet2" &&
        architecture != "custom-small-cnn")
        throw std::invalid_argument("architecture: unknown value '" + architecture + "'");
    if (architecture == "custom-small-cnn" && custom_layers.empty())
        throw std::invalid_argument("layers: custom-small-cnn needs a layer stack");
    if (architecture != "custom-small-cnn" && !custom_layers.empty())
        throw std::invalid_argument("layers: only meaningful for custom-small-cnn");
    if (dataset.kind == "mnist") {
        if (dataset.train_images.empty() || dataset.train_labels.empty() ||
            dataset.test_images.empty() || dataset.test_labels.empty())
            throw std::invalid_argument(
                "dataset: mnist needs train_images, train_labels, test_images, test_labels");
    } else if (dataset.kind == "synth") {
        if (dataset.classes < 2 || dataset.train_n < dataset.classes || dataset.test_n < 1)
            throw std::invalid_argument("dataset: synth needs classes >= 2 and enough samples");
    } else {
        throw std::invalid_argument("dataset.kind: unknown value '" + dataset.kind + "'");
    }
    const bool has_source = !source_checkpoint.empty() || source_train.has_value();
    if (scenario_is_ens(scenario) && !has_source)
        throw std::invalid_argument(
            "source_checkpoint: ens scenarios need a source model "
            "(set source_checkpoint or source_train)");
    if (min_bb_eps > 0.0 && !has_source)
        throw std::invalid_argument(
            "min_bb_eps: black-box Min-BB evaluation needs a source model "
            "(set source_checkpoint or source_train)");
    if (scenario_is_ens(scenario) || scenario_is_pgd(scenario)) adv.validate(train);
    if (source_train) source_train->validate();
    for (const AttackSpec& a : eval_attacks) a.validate();
    if (analysis.enabled) {
        if (analysis.num_points < 2)
            throw std::invalid_argument("analysis.num_points: need at least 2");
        if (analysis.gaas_points < 1)
            throw std::invalid_argument("analysis.gaas_points: need at least 1");
        if (analysis.grid_resolution < 1)
            throw std::invalid_argument("analysis.grid_resolution: need at least 1");
    }
    if (eval_batch < 1) throw std::invalid_argument("eval_batch: must be >= 1");
}

namespace {

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || it.key() == k;
        if (!ok) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
    }
}

TrainConfig train_from_json(const json& j, const std::string& where) {
    reject_unknown_keys(j,
                        {"eta", "eta_adv", "eta_noise", "eta_noise_adv", "momentum",
                         "weight_decay", "epochs", "batch_size", "lr_decay", "lr_decay_step"},
                        where);
    TrainConfig t;
    t.eta = j.value("eta", t.eta);
    t.eta_adv = j.value("eta_adv", t.eta_adv);
    t.eta_noise = j.value("eta_noise", t.eta_noise);
    t.eta_noise_adv = j.value("eta_noise_adv", t.eta_noise_adv);
    t.momentum = j.value("momentum", t.momentum);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.lr_decay = j.value("lr_decay", t.lr_decay);
    t.lr_decay_step = j.value("lr_decay_step", t.lr_decay_step);
    return t;
}

json train_to_json(const TrainConfig& t) {
    return json{{"eta", t.eta},
                {"eta_adv", t.eta_adv},
                {"eta_noise", t.eta_noise},
                {"eta_noise_adv", t.eta_noise_adv},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr_decay", t.lr_decay},
                {"lr_decay_step", t.lr_decay_step}};
}

AttackSpec attack_from_json(const json& j, const std::string& where) {
    reject_unknown_keys(j, {"family", "eps", "alpha", "steps", "random_start", "strict_ball"},
                        where);
    AttackSpec a;
    a.family = attack_family_from_string(j.at("family").get<std::string>());
    a.eps = j.at("eps").get<double>();
    a.alpha = j.value("alpha", 0.0);
    a.steps = j.value("steps", a.family == AttackFamily::Fgsm ? 1 : 2);
    a.random_start = j.value("random_start", true);
    a.rfgsm_strict_ball = j.value("strict_ball", false);
    return a;
}

json attack_to_json(const AttackSpec& a) {
    return json{{"family", to_string(a.family)}, {"eps", a.eps},
                {"alpha", a.alpha},              {"steps", a.steps},
                {"random_start", a.random_start}, {"strict_ball", a.rfgsm_strict_ball}};
}

std::string attack_tag(const AttackSpec& a) {
    std::string tag = to_string(a.family) + "_eps" + format_double(a.eps);
    if (a.family == AttackFamily::Ifgsm || a.family == AttackFamily::Pgd)
        tag += "_steps" + std::to_string(a.steps);
    return tag;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(content.data(), std::streamsize(content.size()));
    if (!os) throw std::runtime_error("write to " + path + " failed");
}

Matrix tap_features(const Model& model, const NoiseBank* bank, const Tensor& x,
                    const std::string& tap) {
    Tensor input = bank ? combine_with_template(x, bank->mean_template(), bank->mode) : x;
    std::map<std::string, Tensor> acts;
    model.forward_with_taps(input, {tap}, acts);
    return Matrix::from_tensor(acts.at(tap));
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    reject_unknown_keys(j,
                        {"scenario", "architecture", "layers", "dataset", "train", "adv",
                         "noise_mode", "noise_filter", "source_checkpoint", "source_train",
                         "eval_attacks", "min_bb_eps", "analysis", "checkpoint_every",
                         "eval_batch", "seed"},
                        "config");

    ExperimentConfig c;
    c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    c.architecture = j.value("architecture", c.architecture);
    if (j.contains("layers")) {
        int i = 0;
        for (const json& l : j["layers"]) {
            const std::string where = "layers[" + std::to_string(i++) + "]";
            reject_unknown_keys(l, {"kind", "filters", "kernel", "pad", "units"}, where);
            const std::string kind = l.at("kind").get<std::string>();
            if (kind == "conv")
                c.custom_layers.push_back(LayerSpec::conv(l.at("filters").get<int>(),
                                                          l.at("kernel").get<int>(),
                                                          l.value("pad", 0)));
            else if (kind == "maxpool") c.custom_layers.push_back(LayerSpec::maxpool());
            else if (kind == "relu") c.custom_layers.push_back(LayerSpec::relu());
            else if (kind == "flatten") c.custom_layers.push_back(LayerSpec::flatten());
            else if (kind == "fc") c.custom_layers.push_back(LayerSpec::fc(l.at("units").get<int>()));
            else throw std::invalid_argument(where + ": unknown kind '" + kind + "'");
        }
    }
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", 0);
    c.eval_batch = j.value("eval_batch", c.eval_batch);
    c.min_bb_eps = j.value("min_bb_eps", 0.0);
    c.source_checkpoint = j.value("source_checkpoint", std::string());

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        reject_unknown_keys(d,
                            {"kind", "train_images", "train_labels", "test_images", "test_labels",
                             "train_subset", "test_subset", "classes", "train_n", "test_n",
                             "image_side"},
                            "dataset");
        c.dataset.kind = d.value("kind", c.dataset.kind);
        c.dataset.train_images = d.value("train_images", std::string());
        c.dataset.train_labels = d.value("train_labels", std::string());
        c.dataset.test_images = d.value("test_images", std::string());
        c.dataset.test_labels = d.value("test_labels", std::string());
        c.dataset.train_subset = d.value("train_subset", 0);
        c.dataset.test_subset = d.value("test_subset", 0);
        c.dataset.classes = d.value("classes", c.dataset.classes);
        c.dataset.train_n = d.value("train_n", c.dataset.train_n);
        c.dataset.test_n = d.value("test_n", c.dataset.test_n);
        c.dataset.image_side = d.value("image_side", c.dataset.image_side);
    }

    if (j.contains("train")) c.train = train_from_json(j["train"], "train");
    if (j.contains("source_train")) c.source_train = train_from_json(j["source_train"], "source_train");

    if (j.contains("noise_mode")) {
        const std::string m = j["noise_mode"].get<std::string>();
        if (m == "multiplicative") c.noise_mode = NoiseMode::Multiplicative;
        else if (m == "additive") c.noise_mode = NoiseMode::Additive;
        else throw std::invalid_argument("noise_mode: unknown value '" + m + "'");
    }
    if (j.contains("noise_filter")) {
        const std::string f = j["noise_filter"].get<std::string>();
        if (f == "negative_only") c.noise_filter = GradFilter::NegativeOnly;
        else if (f == "all") c.noise_filter = GradFilter::All;
        else throw std::invalid_argument("noise_filter: unknown value '" + f + "'");
    }

    if (scenario_is_ens(c.scenario) || scenario_is_pgd(c.scenario)) {
        c.adv.protocol = scenario_is_ens(c.scenario) ? AdvProtocol::EnsAdv : AdvProtocol::PgdAdv;
        c.adv.attack.family =
            scenario_is_ens(c.scenario) ? AttackFamily::Fgsm : AttackFamily::Pgd;
        c.adv.attack.eps = 0.3;
        if (scenario_is_pgd(c.scenario)) {
            c.adv.attack.alpha = 0.01;
            c.adv.attack.steps = 40;
        }
        if (j.contains("adv")) {
            const json& a = j["adv"];
            reject_unknown_keys(a, {"eps", "alpha", "steps", "random_start", "clean_step_first"},
                                "adv");
            c.adv.attack.eps = a.value("eps", c.adv.attack.eps);
            c.adv.attack.alpha = a.value("alpha", c.adv.attack.alpha);
            c.adv.attack.steps = a.value("steps", c.adv.attack.steps);
            c.adv.attack.random_start = a.value("random_start", true);
            c.adv.clean_step_first = a.value("clean_step_first", true);
        }
        c.adv.attack.seed = derive_seed(c.seed, "adv-train");
    } else if (j.contains("adv")) {
        throw std::invalid_argument("adv: only meaningful for ens/pgd scenarios");
    }

    if (j.contains("eval_attacks")) {
        int i = 0;
        for (const json& a : j["eval_attacks"]) {
            AttackSpec spec = attack_from_json(a, "eval_attacks[" + std::to_string(i) + "]");
            spec.seed = derive_seed(c.seed, "eval-attack/" + std::to_string(i));
            c.eval_attacks.push_back(spec);
            ++i;
        }
    }

    if (j.contains("analysis")) {
        const json& a = j["analysis"];
        reject_unknown_keys(a,
                            {"tap", "num_points", "gaas_points", "gaas_eps", "gaas_orders",
                             "attack_eps", "grid_eps", "grid_resolution"},
                            "analysis");
        c.analysis.enabled = true;
        c.analysis.tap = a.value("tap", c.analysis.tap);
        c.analysis.num_points = a.value("num_points", c.analysis.num_points);
        c.analysis.gaas_points = a.value("gaas_points", c.analysis.gaas_points);
        c.analysis.gaas_eps = a.value("gaas_eps", c.analysis.gaas_eps);
        if (a.contains("gaas_orders"))
            c.analysis.gaas_orders = a["gaas_orders"].get<std::vector<int>>();
        c.analysis.attack_eps = a.value("attack_eps", c.analysis.attack_eps);
        c.analysis.grid_eps = a.value("grid_eps", c.analysis.grid_eps);
        c.analysis.grid_resolution = a.value("grid_resolution", c.analysis.grid_resolution);
    }
    return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
    json j;
    j["scenario"] = to_string(c.scenario);
    j["architecture"] = c.architecture;
    if (!c.custom_layers.empty()) {
        json layers = json::array();
        for (const LayerSpec& l : c.custom_layers) {
            switch (l.kind) {
                case LayerSpec::Kind::Conv:
                    layers.push_back(json{{"kind", "conv"},
                                          {"filters", l.filters},
                                          {"kernel", l.kernel},
                                          {"pad", l.pad}});
                    break;
                case LayerSpec::Kind::MaxPool: layers.push_back(json{{"kind", "maxpool"}}); break;
                case LayerSpec::Kind::Relu: layers.push_back(json{{"kind", "relu"}}); break;
                case LayerSpec::Kind::Flatten: layers.push_back(json{{"kind", "flatten"}}); break;
                case LayerSpec::Kind::FullyConnected:
                    layers.push_back(json{{"kind", "fc"}, {"units", l.units}});
                    break;
            }
        }
        j["layers"] = layers;
    }
    j["seed"] = c.seed;
    j["checkpoint_every"] = c.checkpoint_every;
    j["eval_batch"] = c.eval_batch;
    j["min_bb_eps"] = c.min_bb_eps;
    json d;
    d["kind"] = c.dataset.kind;
    if (c.dataset.kind == "mnist") {
        d["train_images"] = c.dataset.train_images;
        d["train_labels"] = c.dataset.train_labels;
        d["test_images"] = c.dataset.test_images;
        d["test_labels"] = c.dataset.test_labels;
        d["train_subset"] = c.dataset.train_subset;
        d["test_subset"] = c.dataset.test_subset;
    } else {
        d["classes"] = c.dataset.classes;
        d["train_n"] = c.dataset.train_n;
        d["test_n"] = c.dataset.test_n;
        d["image_side"] = c.dataset.image_side;
    }
    j["dataset"] = d;
    j["train"] = train_to_json(c.train);
    if (c.source_train) j["source_train"] = train_to_json(*c.source_train);
    if (!c.source_checkpoint.empty()) j["source_checkpoint"] = c.source_checkpoint;
    j["noise_mode"] =
        c.noise_mode == NoiseMode::Multiplicative ? "multiplicative" : "additive";
    j["noise_filter"] = c.noise_filter == GradFilter::NegativeOnly ? "negative_only" : "all";
    if (scenario_is_ens(c.scenario) || scenario_is_pgd(c.scenario)) {
        j["adv"] = json{{"eps", c.adv.attack.eps},
                        {"alpha", c.adv.attack.alpha},
                        {"steps", c.adv.attack.steps},
                        {"random_start", c.adv.attack.random_start},
                        {"clean_step_first", c.adv.clean_step_first}};
    }
    json attacks = json::array();
    for (const AttackSpec& a : c.eval_attacks) attacks.push_back(attack_to_json(a));
    j["eval_attacks"] = attacks;
    if (c.analysis.enabled) {
        j["analysis"] = json{{"tap", c.analysis.tap},
                             {"num_points", c.analysis.num_points},
                             {"gaas_points", c.analysis.gaas_points},
                             {"gaas_eps", c.analysis.gaas_eps},
                             {"gaas_orders", c.analysis.gaas_orders},
                             {"attack_eps", c.analysis.attack_eps},
                             {"grid_eps", c.analysis.grid_eps},
                             {"grid_resolution", c.analysis.grid_resolution}};
    }
    return j.dump(2) + "\n";
}

Dataset load_train_split(const DatasetSpec& spec, uint64_t seed) {
    if (spec.kind == "mnist") {
        Dataset ds = load_idx(spec.train_images, spec.train_labels);
        if (spec.train_subset > 0) ds = ds.subset(spec.train_subset);
        return ds;
    }
    return synth_dataset(spec.classes, spec.train_n, derive_seed(seed, "synth/train"),
                         spec.image_side);
}

Dataset load_test_split(const DatasetSpec& spec, uint64_t seed) {
    if (spec.kind == "mnist") {
        Dataset ds = load_idx(spec.test_images, spec.test_labels);
        if (spec.test_subset > 0) ds = ds.subset(spec.test_subset);
        return ds;
    }
    return synth_dataset(spec.classes, spec.test_n, derive_seed(seed, "synth/test"),
                         spec.image_side);
}

void export_report(const AnalysisReport& report, const std::string& dir) {
    fs::create_directories(dir);
    std::string manifest_files;

    if (!report.variance.empty()) {
        std::string csv = "k,var_k\n";
        for (size_t i = 0; i < report.variance.size(); ++i)
            csv += std::to_string(report.variance_ks[i]) + "," +
                   format_double(report.variance[i]) + "\n";
        write_file(dir + "/variance.csv", csv);
        manifest_files += "    \"variance.csv\",\n";
    }
    if (!report.cosine_distance.empty()) {
        std::string csv = "k,d_pc\n";
        for (size_t i = 0; i < report.cosine_distance.size(); ++i)
            csv += std::to_string(report.distance_ks[i]) + "," +
                   format_double(report.cosine_distance[i]) + "\n";
        write_file(dir + "/distance.csv", csv);
        manifest_files += "    \"distance.csv\",\n";
    }
    if (!report.gaas_success.empty()) {
        std::string csv = "order,success\n";
        for (size_t i = 0; i < report.gaas_success.size(); ++i)
            csv += std::to_string(report.gaas_orders[i]) + "," +
                   format_double(report.gaas_success[i]) + "\n";
        write_file(dir + "/gaas.csv", csv);
        manifest_files += "    \"gaas.csv\",\n";
    }
    if (report.loss_grid.rows > 0) {
        std::string csv = "eps1,eps2,loss\n";
        for (int i = 0; i < report.loss_grid.rows; ++i)
            for (int j = 0; j < report.loss_grid.cols; ++j)
                csv += format_double(report.grid_eps1[size_t(i)]) + "," +
                       format_double(report.grid_eps2[size_t(j)]) + "," +
                       format_double(report.loss_grid.at(i, j)) + "\n";
        write_file(dir + "/loss_grid.csv", csv);
        manifest_files += "    \"loss_grid.csv\",\n";
    }
    if (!manifest_files.empty()) manifest_files.erase(manifest_files.size() - 2, 1);
    write_file(dir + "/report_manifest.json", "{\n  \"files\": [\n" + manifest_files + "  ]\n}\n");
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& run_dir,
                                const std::string& resume_checkpoint) {
    cfg.validate();
    fs::create_directories(run_dir);

    try {
        write_file(run_dir + "/config.json", experiment_config_to_json(cfg));

        Dataset train = load_train_split(cfg.dataset, cfg.seed);
        Dataset test = load_test_split(cfg.dataset, cfg.seed);

        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "train");

        TrainState state;
        if (!resume_checkpoint.empty()) {
            state = load_checkpoint(resume_checkpoint, cfg.architecture);
        } else {
            state.model = build_model(cfg.architecture, train.classes, train.sample_shape(),
                                      derive_seed(cfg.seed, "model"), cfg.custom_layers);
            if (scenario_uses_noise(cfg.scenario))
                state.bank = init_noise(train.sample_shape(), tc.batch_size,
                                        derive_seed(cfg.seed, "noise"), cfg.noise_mode,
                                        cfg.noise_filter);
        }

        std::optional<Model> source;
        if (!cfg.source_checkpoint.empty()) {
            source = load_checkpoint(cfg.source_checkpoint).model;
        } else if (cfg.source_train) {
            TrainConfig sc = *cfg.source_train;
            sc.seed = derive_seed(cfg.seed, "source/train");
            TrainState src_state;
            src_state.model = build_model(cfg.architecture, train.classes, train.sample_shape(),
                                          derive_seed(cfg.seed, "source/model"), cfg.custom_layers);
            for (int e = 0; e < sc.epochs; ++e) train_epoch(src_state, train, sc);
            save_checkpoint(run_dir + "/source_checkpoint.bin", src_state);
            source = std::move(src_state.model);
        }

        std::string training_csv = "epoch,mean_loss,accuracy,noise_min,noise_max\n";
        const bool adversarial = scenario_is_ens(cfg.scenario) || scenario_is_pgd(cfg.scenario);
        while (state.epoch < tc.epochs) {
            EpochMetrics m;
            if (!adversarial)
                m = train_epoch(state, train, tc);
            else if (scenario_is_ens(cfg.scenario))
                m = ensadv_epoch(state, *source, train, tc, cfg.adv);
            else
                m = pgdadv_epoch(state, train, tc, cfg.adv);
            training_csv += std::to_string(state.epoch) + "," + format_double(m.mean_loss) + "," +
                            format_double(m.accuracy) + "," + format_double(m.noise_min) + "," +
                            format_double(m.noise_max) + "\n";
            if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 &&
                state.epoch < tc.epochs)
                save_checkpoint(run_dir + "/checkpoint_epoch" + std::to_string(state.epoch) +
                                    ".bin",
                                state);
        }
        write_file(run_dir + "/training.csv", training_csv);
        save_checkpoint(run_dir + "/checkpoint.bin", state);

        const NoiseBank* bank = state.bank ? &*state.bank : nullptr;
        ExperimentResult result;
        result.clean_train_accuracy = evaluate_accuracy(state.model, bank, train, cfg.eval_batch);
        result.clean_test_accuracy = evaluate_accuracy(state.model, bank, test, cfg.eval_batch);

        std::string eval_csv = "metric,value\n";
        eval_csv += "clean_train_accuracy," + format_double(result.clean_train_accuracy) + "\n";
        eval_csv += "clean_test_accuracy," + format_double(result.clean_test_accuracy) + "\n";

        GradSource wb{&state.model, bank};
        for (const AttackSpec& a : cfg.eval_attacks) {
            eval_csv += "wb_" + attack_tag(a) + "," +
                        format_double(attacked_accuracy(state.model, bank, wb, test, a,
                                                        cfg.eval_batch)) +
                        "\n";
            if (source) {
                GradSource bb{&*source, nullptr};
                eval_csv += "bb_" + attack_tag(a) + "," +
                            format_double(attacked_accuracy(state.model, bank, bb, test, a,
                                                            cfg.eval_batch)) +
                            "\n";
            }
        }
        if (cfg.min_bb_eps > 0.0) {
            GradSource bb{&*source, nullptr};
            MinBbResult r = min_bb_accuracy(state.model, bank, bb, test, cfg.min_bb_eps,
                                            cfg.eval_batch, derive_seed(cfg.seed, "min-bb"));
            eval_csv += "min_bb_fgsm," + format_double(r.fgsm_accuracy) + "\n";
            eval_csv += "min_bb_ifgsm," + format_double(r.ifgsm_accuracy) + "\n";
            eval_csv += "min_bb_rfgsm," + format_double(r.rfgsm_accuracy) + "\n";
            eval_csv += "min_bb," + format_double(r.min_accuracy) + "\n";
        }
        write_file(run_dir + "/evaluation.csv", eval_csv);

        if (cfg.analysis.enabled) {
            const int n = std::min(cfg.analysis.num_points, test.size());
            Dataset sample = test.subset(n);
            std::vector<int> ix(size_t(n), 0);
            for (int i = 0; i < n; ++i) ix[size_t(i)] = i;
            Batch all = gather(sample, ix);
            Tensor adv = fgsm(wb, all.x, all.y, cfg.analysis.attack_eps);

            AnalysisReport report;
            Matrix clean_f = tap_features(state.model, bank, all.x, cfg.analysis.tap);
            Matrix adv_f = tap_features(state.model, bank, adv, cfg.analysis.tap);
            PcaModel pca = fit_pca(clean_f);
            const int m = pca.num_components();
            for (int k = 0; k < m; ++k) report.variance_ks.push_back(k);
            report.variance = variance_curve(pca, report.variance_ks);
            for (int k = 1; k <= m; ++k) report.distance_ks.push_back(k);
            report.cosine_distance = cosine_distance_curve(pca, clean_f, adv_f, report.distance_ks);

            Dataset gaas_sample = test.subset(std::min(cfg.analysis.gaas_points, test.size()));
            GaasResult gr = gaas_estimate(wb, gaas_sample, cfg.analysis.gaas_eps,
                                          cfg.analysis.gaas_orders);
            for (const auto& [order, p] : gr.success_probability) {
                report.gaas_orders.push_back(order);
                report.gaas_success.push_back(p);
            }

            Batch first = gather(test, {0});
            GradSource grid_src = source ? GradSource{&*source, nullptr} : wb;
            report.grid_eps1 = linspace(-cfg.analysis.grid_eps, cfg.analysis.grid_eps,
                                        cfg.analysis.grid_resolution);
            report.grid_eps2 = report.grid_eps1;
            report.loss_grid = loss_surface_grid(wb, grid_src, first.x, first.y, report.grid_eps1,
                                                 report.grid_eps2);
            export_report(report, run_dir + "/analysis");
        }

        json manifest;
        manifest["scenario"] = to_string(cfg.scenario);
        manifest["architecture"] = cfg.architecture;
        manifest["epochs"] = state.epoch;
        manifest["clean_train_accuracy"] = format_double(result.clean_train_accuracy);
        manifest["clean_test_accuracy"] = format_double(result.clean_test_accuracy);
        manifest["artifacts"] = json::array({"config.json", "training.csv", "evaluation.csv",
                                             "checkpoint.bin"});
        if (cfg.analysis.enabled) manifest["artifacts"].push_back("analysis");
        write_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");

        result.state = std::move(state);
        return result;
    } catch (...) {
        write_file(run_dir + "/FAILED", "experiment did not complete\n");
        throw;
    }
}

}  // namespace nol
