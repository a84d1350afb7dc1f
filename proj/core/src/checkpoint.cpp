#include "nol/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nol {

namespace {

constexpr uint32_t kMagic = 0x4e4f4c43;  // "NOLC"
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

void put_shape(std::ostream& os, const Shape& s) {
    put_u32(os, uint32_t(s.size()));
    for (int d : s) put_u32(os, uint32_t(d));
}

void put_tensor(std::ostream& os, const Tensor& t) {
    put_shape(os, t.shape());
    for (double v : t.data()) put_f64(os, v);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_str(std::istream& is) {
    const uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

Shape get_shape(std::istream& is) {
    const uint32_t rank = get_u32(is);
    if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
    Shape s(rank);
    for (uint32_t i = 0; i < rank; ++i) s[i] = int(get_u32(is));
    return s;
}

Tensor get_tensor(std::istream& is) {
    const Shape s = get_shape(is);
    const int n = numel(s);
    std::vector<double> data(size_t(n), 0.0);
    for (int i = 0; i < n; ++i) data[size_t(i)] = get_f64(is);
    return Tensor(s, std::move(data));
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

    put_u32(os, kMagic);
    put_u32(os, kVersion);
    put_str(os, state.model.arch_id());
    put_shape(os, state.model.input_shape());
    put_u32(os, uint32_t(state.model.classes()));

    const auto& layers = state.model.layers();
    put_u32(os, uint32_t(layers.size()));
    for (const LayerSpec& l : layers) {
        put_u32(os, uint32_t(l.kind));
        put_u32(os, uint32_t(l.filters));
        put_u32(os, uint32_t(l.kernel));
        put_u32(os, uint32_t(l.pad));
        put_u32(os, uint32_t(l.units));
    }

    put_u32(os, uint32_t(state.epoch));

    put_u32(os, uint32_t(state.model.params().size()));
    for (const Tensor& p : state.model.params()) put_tensor(os, p);

    put_u32(os, state.bank ? 1u : 0u);
    if (state.bank) {
        put_u32(os, uint32_t(state.bank->mode));
        put_u32(os, uint32_t(state.bank->grad_filter));
        put_u32(os, uint32_t(state.bank->templates.size()));
        for (const Tensor& t : state.bank->templates) put_tensor(os, t);
    }

    put_u32(os, uint32_t(state.opt.velocity.size()));
    for (const Tensor& v : state.opt.velocity) put_tensor(os, v);

    os.flush();
    if (!os) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

    if (get_u32(is) != kMagic)
        throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file (bad magic)");
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " in " + path);

    const std::string arch = get_str(is);
    const Shape input_shape = get_shape(is);
    const int classes = int(get_u32(is));

    const uint32_t layer_count = get_u32(is);
    if (layer_count > 256) throw std::runtime_error("checkpoint: implausible layer count");
    std::vector<LayerSpec> layers(layer_count);
    for (LayerSpec& l : layers) {
        const uint32_t kind = get_u32(is);
        if (kind > uint32_t(LayerSpec::Kind::FullyConnected))
            throw std::runtime_error("checkpoint: unknown layer kind");
        l.kind = LayerSpec::Kind(kind);
        l.filters = int(get_u32(is));
        l.kernel = int(get_u32(is));
        l.pad = int(get_u32(is));
        l.units = int(get_u32(is));
    }

    TrainState state;
    state.epoch = int(get_u32(is));
    state.model = Model(arch, input_shape, classes, layers, 0);

    const uint32_t param_count = get_u32(is);
    if (param_count != state.model.params().size())
        throw std::runtime_error("checkpoint: parameter count mismatch for arch " + arch);
    for (Tensor& p : state.model.params()) {
        Tensor loaded = get_tensor(is);
        if (loaded.shape() != p.shape())
            throw std::runtime_error("checkpoint: parameter shape mismatch, got " +
                                     shape_str(loaded.shape()) + " want " + shape_str(p.shape()));
        p.data() = loaded.data();
    }

    if (get_u32(is) != 0) {
        NoiseBank bank;
        const uint32_t mode = get_u32(is);
        const uint32_t filter = get_u32(is);
        if (mode > 1 || filter > 1)
            throw std::runtime_error("checkpoint: unknown noise mode or gradient filter");
        bank.mode = NoiseMode(mode);
        bank.grad_filter = GradFilter(filter);
        const uint32_t k = get_u32(is);
        if (k > (1u << 16)) throw std::runtime_error("checkpoint: implausible template count");
        for (uint32_t i = 0; i < k; ++i) bank.templates.push_back(get_tensor(is));
        state.bank = std::move(bank);
    }

    const uint32_t vel_count = get_u32(is);
    if (vel_count > (1u << 16)) throw std::runtime_error("checkpoint: implausible buffer count");
    for (uint32_t i = 0; i < vel_count; ++i) state.opt.velocity.push_back(get_tensor(is));

    return state;
}

TrainState load_checkpoint(const std::string& path, const std::string& expected_arch) {
    TrainState state = load_checkpoint(path);
    if (state.model.arch_id() != expected_arch)
        throw std::runtime_error("checkpoint: " + path + " holds arch " + state.model.arch_id() +
                                 ", expected " + expected_arch);
    return state;
}

}  // namespace nol
