#include "nol/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated IDX header");
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Shape Dataset::sample_shape() const {
    const Shape& s = images.shape();
    return Shape(s.begin() + 1, s.end());
}

Dataset Dataset::subset(int first_n) const {
    if (first_n < 1 || first_n > size())
        throw std::invalid_argument("subset: bad size " + std::to_string(first_n));
    const int stride = images.size() / size();
    Dataset out;
    out.images = Tensor(Shape{first_n, images.shape()[1], images.shape()[2], images.shape()[3]},
                        std::vector<double>(images.data().begin(),
                                            images.data().begin() + long(first_n) * stride));
    out.labels.assign(labels.begin(), labels.begin() + first_n);
    out.classes = classes;
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw std::runtime_error("cannot open images file: " + images_path);
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw std::runtime_error("cannot open labels file: " + labels_path);

    if (read_be_u32(fi, images_path) != kImagesMagic)
        throw std::runtime_error(images_path + ": bad IDX magic (expected 0x00000803)");
    const uint32_t n = read_be_u32(fi, images_path);
    const uint32_t h = read_be_u32(fi, images_path);
    const uint32_t w = read_be_u32(fi, images_path);

    if (read_be_u32(fl, labels_path) != kLabelsMagic)
        throw std::runtime_error(labels_path + ": bad IDX magic (expected 0x00000801)");
    const uint32_t nl = read_be_u32(fl, labels_path);
    if (n != nl)
        throw std::runtime_error("image/label count mismatch: " + std::to_string(n) + " images vs " +
                                 std::to_string(nl) + " labels");
    if (n == 0) throw std::runtime_error(images_path + ": empty dataset");

    std::vector<unsigned char> pixels(size_t(n) * h * w);
    if (!fi.read(reinterpret_cast<char*>(pixels.data()), long(pixels.size())))
        throw std::runtime_error(images_path + ": truncated pixel payload");
    std::vector<unsigned char> raw_labels(n);
    if (!fl.read(reinterpret_cast<char*>(raw_labels.data()), long(raw_labels.size())))
        throw std::runtime_error(labels_path + ": truncated label payload");

    Dataset ds;
    std::vector<double> data(pixels.size());
    for (size_t i = 0; i < pixels.size(); ++i) data[i] = pixels[i] / 255.0;
    ds.images = Tensor(Shape{int(n), 1, int(h), int(w)}, std::move(data));
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    int maxl = 0;
    for (int l : ds.labels) maxl = std::max(maxl, l);
    ds.classes = maxl + 1;
    return ds;
}

Dataset synth_dataset(int classes, int n, uint64_t seed, int image_side) {
    if (classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
    if (n < classes) throw std::invalid_argument("synth_dataset: need n >= classes");
    Rng rng(derive_seed(seed, "synth-dataset"));
    const int d = image_side * image_side;

    // one prototype image per class
    std::vector<std::vector<double>> protos(size_t(classes), std::vector<double>(size_t(d), 0.0));
    for (auto& p : protos)
        for (double& v : p) v = rng.uniform();

    // round-robin labels keep balance within +-1, then shuffle the order
    std::vector<int> labels(size_t(n), 0);
    for (int i = 0; i < n; ++i) labels[size_t(i)] = i % classes;
    rng.shuffle(labels);

    std::vector<double> data(size_t(n) * d);
    for (int i = 0; i < n; ++i) {
        const auto& p = protos[size_t(labels[size_t(i)])];
        for (int j = 0; j < d; ++j) {
            const double v = p[size_t(j)] + 0.15 * rng.normal();
            data[size_t(i) * d + size_t(j)] = std::min(1.0, std::max(0.0, v));
        }
    }
    Dataset ds;
    ds.images = Tensor(Shape{n, 1, image_side, image_side}, std::move(data));
    ds.labels = std::move(labels);
    ds.classes = classes;
    return ds;
}

std::vector<std::vector<int>> batch_indices(int n, const BatchPlan& plan) {
    if (plan.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (plan.batch_size > n)
        throw std::invalid_argument("batch size " + std::to_string(plan.batch_size) +
                                    " exceeds dataset size " + std::to_string(n));
    std::vector<int> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), 0);
    if (plan.shuffle) {
        Rng rng(derive_seed(plan.seed, "batch-shuffle"));
        rng.shuffle(order);
    }
    std::vector<std::vector<int>> out;
    for (int start = 0; start < n; start += plan.batch_size) {
        const int end = std::min(n, start + plan.batch_size);
        if (plan.drop_last && end - start < plan.batch_size) break;
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

Batch gather(const Dataset& ds, const std::vector<int>& indices, int batch_index) {
    const Shape ss = ds.sample_shape();
    const int stride = numel(ss);
    Batch b;
    b.index = batch_index;
    std::vector<double> data(indices.size() * size_t(stride));
    b.y.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        std::copy(ds.images.data().begin() + long(idx) * stride,
                  ds.images.data().begin() + long(idx + 1) * stride,
                  data.begin() + long(i) * stride);
        b.y.push_back(ds.labels[size_t(idx)]);
    }
    Shape s{int(indices.size())};
    s.insert(s.end(), ss.begin(), ss.end());
    b.x = Tensor(std::move(s), std::move(data));
    return b;
}

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan) {
    std::vector<Batch> out;
    auto idx = batch_indices(ds.size(), plan);
    for (size_t i = 0; i < idx.size(); ++i) out.push_back(gather(ds, idx[i], int(i)));
    return out;
}

}  // namespace nol
