#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nol/adv_train.hpp"
#include "nol/analysis.hpp"
#include "nol/attacks.hpp"
#include "nol/data.hpp"
#include "nol/trainer.hpp"

namespace nol {

enum class Scenario { Sgd, Nol, SgdEns, NolEns, SgdPgd, NolPgd };

Scenario scenario_from_string(const std::string& s);
std::string to_string(Scenario s);
bool scenario_uses_noise(Scenario s);
bool scenario_is_ens(Scenario s);
bool scenario_is_pgd(Scenario s);

// Either IDX files on disk or a synthetic dataset.
struct DatasetSpec {
    std::string kind = "synth";  // "mnist" | "synth"
    std::string train_images, train_labels, test_images, test_labels;
    int train_subset = 0;  // 0 = all
    int test_subset = 0;
    int classes = 10;     // synth
    int train_n = 512;    // synth
    int test_n = 128;     // synth
    int image_side = 8;   // synth
};

struct AnalysisSpec {
    bool enabled = false;
    std::string tap = "conv1";
    int num_points = 128;       // PCA / distance sample
    int gaas_points = 32;       // GAAS sample
    double gaas_eps = 0.1;
    std::vector<int> gaas_orders = {4, 8, 16};
    double attack_eps = 0.1;    // FGSM adversaries behind the distance curve
    double grid_eps = 0.3;
    int grid_resolution = 9;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::Sgd;
    std::string architecture = "convnet2";
    std::vector<LayerSpec> custom_layers;  // custom-small-cnn only
    DatasetSpec dataset;
    TrainConfig train;
    AdvTrainConfig adv;       // ens/pgd scenarios only
    NoiseMode noise_mode = NoiseMode::Multiplicative;
    GradFilter noise_filter = GradFilter::NegativeOnly;
    std::string source_checkpoint;       // ens: path to a trained source
    std::optional<TrainConfig> source_train;  // ens: or train one inline
    std::vector<AttackSpec> eval_attacks;
    double min_bb_eps = 0.0;  // 0 disables the Min-BB evaluation
    AnalysisSpec analysis;
    int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
    int eval_batch = 256;
    uint64_t seed = 1;

    void validate() const;  // throws std::invalid_argument naming the field
};

ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct ExperimentResult {
    TrainState state;
    double clean_train_accuracy = 0.0;
    double clean_test_accuracy = 0.0;
};

// Train per scenario, evaluate, analyze, and persist everything under
// run_dir (created if absent): training.csv, evaluation.csv, analysis
// exports, checkpoint.bin, manifest.json. A mid-run failure leaves the
// partial artifacts plus a FAILED marker file and rethrows. All numeric
// output is printed with 17 significant digits so reruns are byte
// identical.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& run_dir,
                                const std::string& resume_checkpoint = "");

// Write the report curves as delimited text plus a manifest:
// variance.csv (k,var_k), distance.csv (k,d_pc), gaas.csv
// (order,success), loss_grid.csv (eps1,eps2,loss).
void export_report(const AnalysisReport& report, const std::string& dir);

// 17-significant-digit decimal rendering used by every artifact writer.
std::string format_double(double v);

Dataset load_train_split(const DatasetSpec& spec, uint64_t seed);
Dataset load_test_split(const DatasetSpec& spec, uint64_t seed);

}  // namespace nol
