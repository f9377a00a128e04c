#include "lietorch/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lietorch {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("LTF: truncated file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

void write_sidecar(const std::filesystem::path& path, const nlohmann::json& meta) {
    std::ofstream os(sidecar_path(path));
    if (!os) throw std::runtime_error("cannot write " + sidecar_path(path).string());
    os << meta.dump(2) << '\n';
}

}  // namespace

std::size_t LtfTensor::count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_ltf(const std::filesystem::path& path, std::span<const std::uint32_t> dims, std::span<const double> values) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    if (n != values.size()) throw std::invalid_argument("LTF: dims do not match the payload size");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write("LTF1", 4);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put_le<std::uint32_t>(os, d);
    for (double v : values) put_le<float>(os, static_cast<float>(v));
}

LtfTensor read_ltf(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "LTF1", 4) != 0)
        throw std::runtime_error("LTF: bad magic in " + path.string());
    LtfTensor t;
    const auto rank = get_le<std::uint32_t>(is);
    if (rank > 16) throw std::runtime_error("LTF: implausible rank");
    for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(get_le<std::uint32_t>(is));
    t.values.resize(t.count());
    for (auto& v : t.values) v = get_le<float>(is);
    return t;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

void write_feature_map(const std::filesystem::path& path, const M2FeatureMap& map) {
    const M2Grid& g = map.grid();
    const std::uint32_t dims[4] = {static_cast<std::uint32_t>(map.channels()),
                                   static_cast<std::uint32_t>(g.orientations),
                                   static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)};
    write_ltf(path, dims, map.data());
    write_sidecar(path, {{"axes", {"c", "k", "y", "x"}},
                         {"grid", {{"width", g.width}, {"height", g.height}, {"orientations", g.orientations},
                                   {"dx", 1.0}, {"dy", 1.0}, {"dtheta", g.dtheta()}}},
                         {"dtype", "float32"}});
}

M2FeatureMap read_feature_map(const std::filesystem::path& path) {
    LtfTensor t = read_ltf(path);
    if (t.dims.size() == 3) t.dims.insert(t.dims.begin(), 1);
    if (t.dims.size() != 4) throw std::runtime_error("feature map must have rank 3 or 4");
    M2FeatureMap map(M2Grid(static_cast<int>(t.dims[3]), static_cast<int>(t.dims[2]), static_cast<int>(t.dims[1])),
                     static_cast<int>(t.dims[0]));
    std::copy(t.values.begin(), t.values.end(), map.data().begin());
    return map;
}

void write_image(const std::filesystem::path& path, const Image2D& img) {
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.channels()), static_cast<std::uint32_t>(img.height()),
                                   static_cast<std::uint32_t>(img.width())};
    write_ltf(path, dims, img.data());
    write_sidecar(path, {{"axes", {"c", "y", "x"}},
                         {"grid", {{"width", img.width()}, {"height", img.height()}}},
                         {"dtype", "float32"}});
}

Image2D read_image(const std::filesystem::path& path) {
    LtfTensor t = read_ltf(path);
    if (t.dims.size() == 2) t.dims.insert(t.dims.begin(), 1);
    if (t.dims.size() != 3) throw std::runtime_error("image must have rank 2 or 3");
    Image2D img(static_cast<int>(t.dims[2]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]));
    std::copy(t.values.begin(), t.values.end(), img.data().begin());
    return img;
}

namespace {

std::string next_token(std::istream& is) {
    std::string tok;
    while (is) {
        const int ch = is.peek();
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(ch)) {
            is.get();
        } else {
            break;
        }
    }
    is >> tok;
    return tok;
}

}  // namespace

Image2D read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    if (next_token(is) != "P5") throw std::runtime_error("PGM: only binary P5 is supported");
    const int w = std::stoi(next_token(is));
    const int h = std::stoi(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (maxval != 255) throw std::runtime_error("PGM: maxval must be 255");
    is.get();  // single whitespace before the raster
    Image2D img(w, h, 1);
    std::vector<unsigned char> raster(static_cast<std::size_t>(w) * h);
    if (!is.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size())))
        throw std::runtime_error("PGM: truncated raster");
    for (std::size_t i = 0; i < raster.size(); ++i) img.data()[i] = raster[i] / 255.0;
    return img;
}

void write_pgm(const std::filesystem::path& path, const Image2D& img, int channel) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const double v = std::clamp(img(channel, y, x), 0.0, 1.0);
            os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
}

Image2D load_image_any(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm" || ext == ".PGM") return read_pgm(path);
    return read_image(path);
}

}  // namespace lietorch
