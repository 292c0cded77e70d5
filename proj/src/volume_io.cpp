#include "mosformer/volume_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mosf {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};

enum DtypeTag : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of file");
    return v;
}

struct Header {
    std::uint8_t dtype;
    std::uint64_t c, h, w, d;
    std::array<double, 3> spacing;
    std::uint32_t classes;
};

void write_header(std::ostream& os, const Header& hd) {
    os.write(kMagic, 4);
    write_pod(os, kVolumeFormatVersion);
    write_pod(os, hd.dtype);
    write_pod(os, hd.c);
    write_pod(os, hd.h);
    write_pod(os, hd.w);
    write_pod(os, hd.d);
    for (double s : hd.spacing) write_pod(os, s);
    write_pod(os, hd.classes);
}

Header read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not an MVOL file: " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVolumeFormatVersion) throw IoError("unsupported MVOL version in " + path);
    Header hd{};
    hd.dtype = read_pod<std::uint8_t>(is);
    hd.c = read_pod<std::uint64_t>(is);
    hd.h = read_pod<std::uint64_t>(is);
    hd.w = read_pod<std::uint64_t>(is);
    hd.d = read_pod<std::uint64_t>(is);
    for (double& s : hd.spacing) s = read_pod<double>(is);
    hd.classes = read_pod<std::uint32_t>(is);
    return hd;
}

}  // namespace

void save_volume(const std::string& path, const Volume& vol) {
    if (vol.voxels.size() != vol.c * vol.h * vol.w * vol.d) throw IoError("volume payload length mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_header(os, {kF32, vol.c, vol.h, vol.w, vol.d, vol.spacing, 0});
    os.write(reinterpret_cast<const char*>(vol.voxels.data()),
             static_cast<std::streamsize>(vol.voxels.size() * sizeof(float)));
    if (!os) throw IoError("short write: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    const Header hd = read_header(is, path);
    if (hd.dtype != kF32) throw IoError("expected f32 image volume: " + path);
    Volume vol;
    vol.c = hd.c;
    vol.h = hd.h;
    vol.w = hd.w;
    vol.d = hd.d;
    vol.spacing = hd.spacing;
    vol.voxels.resize(hd.c * hd.h * hd.w * hd.d);
    is.read(reinterpret_cast<char*>(vol.voxels.data()),
            static_cast<std::streamsize>(vol.voxels.size() * sizeof(float)));
    if (!is) throw IoError("payload shorter than header extents: " + path);
    return vol;
}

void save_labels(const std::string& path, const LabelVolume& labels) {
    if (labels.v.size() != labels.h * labels.w * labels.d) throw IoError("label payload length mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_header(os, {kU8, 1, labels.h, labels.w, labels.d, labels.spacing, labels.num_classes});
    os.write(reinterpret_cast<const char*>(labels.v.data()), static_cast<std::streamsize>(labels.v.size()));
    if (!os) throw IoError("short write: " + path);
}

LabelVolume load_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    const Header hd = read_header(is, path);
    if (hd.dtype != kU8 || hd.c != 1) throw IoError("expected u8 label volume: " + path);
    LabelVolume labels;
    labels.h = hd.h;
    labels.w = hd.w;
    labels.d = hd.d;
    labels.spacing = hd.spacing;
    labels.num_classes = hd.classes;
    labels.v.resize(hd.h * hd.w * hd.d);
    is.read(reinterpret_cast<char*>(labels.v.data()), static_cast<std::streamsize>(labels.v.size()));
    if (!is) throw IoError("payload shorter than header extents: " + path);
    return labels;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "case_id,image,label,split\n";
    for (const auto& e : entries) os << e.case_id << ',' << e.image_path << ',' << e.label_path << ',' << e.split << '\n';
    if (!os) throw IoError("short write: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;  // header
        }
        std::stringstream ss(line);
        ManifestEntry e;
        if (!std::getline(ss, e.case_id, ',') || !std::getline(ss, e.image_path, ',') ||
            !std::getline(ss, e.label_path, ',') || !std::getline(ss, e.split, ','))
            throw IoError("malformed manifest row: " + line);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace mosf
