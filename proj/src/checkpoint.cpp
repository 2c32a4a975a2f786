#include "phasekit/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace phasekit::ckpt {

namespace {

constexpr char kMagic[4] = {'P', 'K', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t off = 0;

    void need(std::size_t n) const {
        if (off + n > b.size()) throw Error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
        off += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + off), n);
        off += n;
        return s;
    }
};

}  // namespace

const ag::Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u64(out, c.meta_json.size());
    out.insert(out.end(), c.meta_json.begin(), c.meta_json.end());
    put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, tensor] : c.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::int64_t d : tensor.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        for (double v : tensor.data()) put_f64(out, v);
    }
    return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(4) != std::string(kMagic, 4)) throw Error("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    const std::uint64_t json_len = r.u64();
    c.meta_json = r.str(json_len);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u32());
        const std::uint32_t ndim = r.u32();
        ag::Shape shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<std::int64_t>(r.u64());
        const std::int64_t n = ag::numel(shape);
        std::vector<double> data(static_cast<std::size_t>(n));
        for (std::int64_t k = 0; k < n; ++k) data[static_cast<std::size_t>(k)] = r.f64();
        c.tensors.emplace_back(name, ag::Tensor::from(std::move(data), shape));
    }
    if (r.off != bytes.size()) throw Error("checkpoint: trailing bytes");
    return c;
}

void save(const std::string& path, const Checkpoint& c) {
    const std::vector<std::uint8_t> bytes = serialize(c);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace phasekit::ckpt
