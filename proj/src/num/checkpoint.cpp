#include "mcie/num/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mcie::num {

namespace {

constexpr const char kMagic[] = "mcie-ckpt-1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw data_error(std::string("checkpoint truncated reading ") + what);
    return v;
}

std::string read_bytes(std::istream& is, std::size_t n, const char* what) {
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw data_error(std::string("checkpoint truncated reading ") + what);
    return s;
}

std::ifstream open_checked(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open checkpoint: " + path);
    std::string magic(kMagicLen, '\0');
    is.read(magic.data(), static_cast<std::streamsize>(kMagicLen));
    if (!is || std::memcmp(magic.data(), kMagic, kMagicLen) != 0) {
        throw data_error("not an mcie-ckpt-1 file: " + path);
    }
    return is;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& params,
                     const std::string& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw data_error("cannot write checkpoint: " + path);
    os.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    write_u32(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_u32(os, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& [name, t] : params.entries()) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) {
            std::int32_t dd = d;
            os.write(reinterpret_cast<const char*>(&dd), sizeof(dd));
        }
        os.write(reinterpret_cast<const char*>(t.value().data()),
                 static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    }
    if (!os) throw data_error("short write to checkpoint: " + path);
}

std::string load_checkpoint(const std::string& path, ParamRegistry& params) {
    std::ifstream is = open_checked(path);
    const std::uint32_t meta_len = read_u32(is, "meta length");
    std::string meta = read_bytes(is, meta_len, "meta");
    const std::uint32_t count = read_u32(is, "tensor count");
    if (count != params.entries().size()) {
        throw data_error("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                         std::to_string(params.entries().size()));
    }
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is, "name length");
        const std::string name = read_bytes(is, name_len, "name");
        const std::uint32_t ndim = read_u32(is, "rank");
        std::vector<int> dims(ndim);
        for (auto& d : dims) {
            std::int32_t dd = 0;
            is.read(reinterpret_cast<char*>(&dd), sizeof(dd));
            if (!is) throw data_error("checkpoint truncated reading dims");
            d = dd;
        }
        if (!params.contains(name)) {
            throw data_error("checkpoint tensor has no matching parameter: " + name);
        }
        Tensor t = params.find(name);
        if (t.shape() != dims) {
            throw data_error("shape mismatch for " + name + ": checkpoint " +
                             Tensor::shape_str(dims) + ", model " + t.shape_str());
        }
        auto& val = t.mutable_value();
        is.read(reinterpret_cast<char*>(val.data()),
                static_cast<std::streamsize>(val.size() * sizeof(double)));
        if (!is) throw data_error("checkpoint truncated reading values of " + name);
        ++loaded;
    }
    if (loaded != params.entries().size()) {
        throw data_error("checkpoint missing parameters");
    }
    return meta;
}

std::string read_checkpoint_meta(const std::string& path) {
    std::ifstream is = open_checked(path);
    const std::uint32_t meta_len = read_u32(is, "meta length");
    return read_bytes(is, meta_len, "meta");
}

}  // namespace mcie::num
