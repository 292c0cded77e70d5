#include "mosformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace mosf {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'O', 'S', 'F'};

template <typename T>
constexpr std::uint8_t dtype_tag() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else return 1;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: unexpected end of file");
    return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_pod(os, kCheckpointFormatVersion);
    for (const auto& e : store.entries()) {
        write_pod(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod(os, dtype_tag<T>());
        const auto& shape = e.tensor.shape();
        write_pod(os, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t ext : shape) write_pod(os, static_cast<std::uint64_t>(ext));
        os.write(reinterpret_cast<const char*>(e.tensor.data().data()),
                 static_cast<std::streamsize>(e.tensor.size() * sizeof(T)));
    }
    if (!os) throw IoError("short write: " + path);
}

template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a MOSF checkpoint: " + path);
    if (read_pod<std::uint32_t>(is) != kCheckpointFormatVersion)
        throw IoError("unsupported checkpoint version: " + path);

    std::unordered_set<std::string> filled;
    while (true) {
        std::uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw IoError("checkpoint: truncated record header");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto tag = read_pod<std::uint8_t>(is);
        if (tag > 1) throw IoError("checkpoint: unknown dtype tag in " + name);
        const auto rank = read_pod<std::uint32_t>(is);
        Shape shape(rank);
        std::size_t numel = 1;
        for (auto& ext : shape) {
            ext = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
            numel *= ext;
        }
        if (!store.has(name)) throw ConfigError("checkpoint record does not match the model: " + name);
        Tensor<T>& t = store.get(name);
        if (t.shape() != shape) throw ConfigError("checkpoint shape mismatch at " + name);
        if (tag == dtype_tag<T>()) {
            is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(numel * sizeof(T)));
            if (!is) throw IoError("checkpoint: truncated payload at " + name);
        } else if (tag == 0) {
            std::vector<float> buf(numel);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * sizeof(float)));
            if (!is) throw IoError("checkpoint: truncated payload at " + name);
            for (std::size_t i = 0; i < numel; ++i) t.data()[i] = static_cast<T>(buf[i]);
        } else {
            std::vector<double> buf(numel);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * sizeof(double)));
            if (!is) throw IoError("checkpoint: truncated payload at " + name);
            for (std::size_t i = 0; i < numel; ++i) t.data()[i] = static_cast<T>(buf[i]);
        }
        filled.insert(name);
    }
    for (const auto& e : store.entries())
        if (!filled.count(e.name)) throw ConfigError("checkpoint is missing parameter: " + e.name);
}

template void save_checkpoint<float>(const std::string&, const ParamStore<float>&);
template void save_checkpoint<double>(const std::string&, const ParamStore<double>&);
template void load_checkpoint<float>(const std::string&, ParamStore<float>&);
template void load_checkpoint<double>(const std::string&, ParamStore<double>&);

}  // namespace mosf
