#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nol/tensor.hpp"

namespace nol {

// Images in [0,1], labels as class indices.
struct Dataset {
    Tensor images;            // [n,c,h,w]
    std::vector<int> labels;  // in [0, classes)
    int classes = 0;

    int size() const { return images.defined() ? images.shape()[0] : 0; }
    Shape sample_shape() const;  // [c,h,w]
    Dataset subset(int first_n) const;
};

struct BatchPlan {
    int batch_size = 64;
    uint64_t seed = 0;
    bool shuffle = true;
    bool drop_last = false;
};

struct Batch {
    Tensor x;  // [k,c,h,w]
    std::vector<int> y;
    int index = 0;
};

// IDX files: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// big-endian u32 dims, raw unsigned bytes. Pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Test-oriented synthetic data: per-class blob prototypes rendered as small
// images plus bounded pixel noise. Deterministic under seed, class-balanced
// within +-1, linearly separable enough for a small MLP.
Dataset synth_dataset(int classes, int n, uint64_t seed, int image_side = 8);

// Shuffled batch index plan; all batches have size k except possibly the
// last (dropped when drop_last).
std::vector<std::vector<int>> batch_indices(int n, const BatchPlan& plan);

Batch gather(const Dataset& ds, const std::vector<int>& indices, int batch_index = 0);

// Convenience: materialize all batches (fine for small datasets/tests).
std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan);

}  // namespace nol
