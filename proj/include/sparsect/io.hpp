// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sparsect/common.hpp"
#include "sparsect/fusion.hpp"
#include "sparsect/image.hpp"
#include "sparsect/latent.hpp"
#include "sparsect/projector.hpp"
#include "sparsect/volume.hpp"

namespace sparsect {

// ---------------------------------------------------------------------------
// Little-endian primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
    buf.push_back(static_cast<char>((v >> 16) & 0xFF));
    buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_f32(std::string& buf, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

class Reader {
  public:
    Reader(const std::string& bytes, const std::string& what)
        : bytes_(bytes), what_(what) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + i]);
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    void magic(const char* tag) {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, tag, 4) != 0)
            throw io_error(what_ + ": bad magic (expected " + tag + ")");
        pos_ += 4;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw io_error(what_ + ": truncated file");
    }

    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open file for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// VOL1 volumes
// ---------------------------------------------------------------------------
//
// "VOL1" magic; little-endian u32 d, h, w; f32 spacing x/y/z; f32 origin
// x/y/z; u8 unit tag (0 = HU, 1 = normalized); then d*h*w little-endian f32
// voxels, x-fastest.

inline std::string encode_vol1(const Volume3D& v) {
    std::string buf;
    buf.reserve(29 + 4 * v.size());
    buf.append("VOL1");
    detail::put_u32(buf, static_cast<std::uint32_t>(v.dim().d));
    detail::put_u32(buf, static_cast<std::uint32_t>(v.dim().h));
    detail::put_u32(buf, static_cast<std::uint32_t>(v.dim().w));
    detail::put_f32(buf, static_cast<float>(v.spacing().x));
    detail::put_f32(buf, static_cast<float>(v.spacing().y));
    detail::put_f32(buf, static_cast<float>(v.spacing().z));
    detail::put_f32(buf, static_cast<float>(v.origin().x));
    detail::put_f32(buf, static_cast<float>(v.origin().y));
    detail::put_f32(buf, static_cast<float>(v.origin().z));
    buf.push_back(static_cast<char>(v.unit()));
    for (double x : v.data()) detail::put_f32(buf, static_cast<float>(x));
    return buf;
}

inline Volume3D decode_vol1(detail::Reader& r) {
    r.magic("VOL1");
    Dim3 dim{r.u32(), r.u32(), r.u32()};
    Vec3 spacing{r.f32(), r.f32(), r.f32()};
    Vec3 origin{r.f32(), r.f32(), r.f32()};
    const std::uint8_t tag = r.u8();
    if (tag > 1) throw io_error("VOL1: unknown unit tag");
    std::vector<double> data(dim.count());
    for (double& x : data) x = r.f32();
    return Volume3D(dim, spacing, origin, static_cast<VolumeUnit>(tag),
                    std::move(data));
}

inline void write_vol1(const std::filesystem::path& path, const Volume3D& v) {
    detail::write_file(path, encode_vol1(v));
}

inline Volume3D read_vol1(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    detail::Reader r(bytes, "VOL1 " + path.string());
    Volume3D v = decode_vol1(r);
    if (!r.at_end()) throw io_error("VOL1: trailing bytes in " + path.string());
    return v;
}

// ---------------------------------------------------------------------------
// VOL1-MC feature volumes
// ---------------------------------------------------------------------------
//
// "VOLC" magic, u32 channel count, then one full VOL1 stream per channel
// (all channels share dims, spacing and origin, which encode the grid).

inline void write_volc(const std::filesystem::path& path,
                       const FeatureVolume& f) {
    std::string buf;
    buf.append("VOLC");
    detail::put_u32(buf, static_cast<std::uint32_t>(f.channels));
    const std::size_t cells = f.cells();
    for (std::size_t ch = 0; ch < f.channels; ++ch) {
        std::vector<double> plane(f.data.begin() + ch * cells,
                                  f.data.begin() + (ch + 1) * cells);
        Volume3D v(f.grid.dim, f.grid.spacing, f.grid.origin, VolumeUnit::HU,
                   std::move(plane));
        buf += encode_vol1(v);
    }
    detail::write_file(path, buf);
}

inline FeatureVolume read_volc(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    detail::Reader r(bytes, "VOLC " + path.string());
    r.magic("VOLC");
    const std::uint32_t channels = r.u32();
    if (channels == 0) throw io_error("VOLC: zero channels");
    FeatureVolume f;
    for (std::uint32_t ch = 0; ch < channels; ++ch) {
        Volume3D v = decode_vol1(r);
        if (ch == 0) {
            f = FeatureVolume(channels,
                              GridSpec{v.dim(), v.spacing(), v.origin()});
        } else if (v.dim() != f.grid.dim) {
            throw io_error("VOLC: channel shape mismatch");
        }
        std::copy(v.data().begin(), v.data().end(),
                  f.data.begin() + ch * f.cells());
    }
    if (!r.at_end()) throw io_error("VOLC: trailing bytes in " + path.string());
    return f;
}

// ---------------------------------------------------------------------------
// CBK1 codebooks
// ---------------------------------------------------------------------------
//
// "CBK1" magic, u32 count, u32 dim, then count*dim little-endian f32.

inline void write_cbk1(const std::filesystem::path& path, const Codebook& c) {
    std::string buf;
    buf.append("CBK1");
    detail::put_u32(buf, static_cast<std::uint32_t>(c.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(c.dim()));
    for (double x : c.flat()) detail::put_f32(buf, static_cast<float>(x));
    detail::write_file(path, buf);
}

inline Codebook read_cbk1(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    detail::Reader r(bytes, "CBK1 " + path.string());
    r.magic("CBK1");
    const std::uint32_t count = r.u32();
    const std::uint32_t dim = r.u32();
    if (count == 0 || dim == 0) throw io_error("CBK1: empty codebook");
    std::vector<double> flat(static_cast<std::size_t>(count) * dim);
    for (double& x : flat) x = r.f32();
    if (!r.at_end()) throw io_error("CBK1: trailing bytes in " + path.string());
    return Codebook(dim, std::move(flat));
}

// ---------------------------------------------------------------------------
// 16-bit PGM x-rays with geometry sidecars
// ---------------------------------------------------------------------------
//
// Images are written as binary PGM (P5), maxval 65535, big-endian samples,
// linearly mapped from [0, image max]. The sidecar "<stem>.txt" records the
// value mapping and the acquisition geometry so each x-ray file is
// self-describing.

inline void write_xray(const std::filesystem::path& pgm_path,
                       const Image2D& img, const ProjectionGeometry& g) {
    require(img.rows == g.detector_rows && img.cols == g.detector_cols,
            "write_xray: image size must match the detector");
    double peak = 0.0;
    for (double v : img.data) peak = std::max(peak, v);

    std::string buf;
    buf += "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) +
           "\n65535\n";
    const double scale = peak > 0.0 ? 65535.0 / peak : 0.0;
    for (double v : img.data) {
        const long q = std::lround(std::clamp(v, 0.0, peak) * scale);
        const auto s = static_cast<std::uint16_t>(std::clamp(q, 0L, 65535L));
        buf.push_back(static_cast<char>(s >> 8));  // big-endian samples
        buf.push_back(static_cast<char>(s & 0xFF));
    }
    detail::write_file(pgm_path, buf);

    std::ostringstream side;
    side.precision(17);
    side << "# x-ray sidecar: value = pgm/65535 * scale\n";
    side << "scale=" << peak << "\n";
    side << "beam=" << (g.beam == BeamType::Parallel ? "parallel" : "cone")
         << "\n";
    side << "angle_deg=" << g.angle_deg << "\n";
    side << "dso=" << g.dso << "\n";
    side << "dsd=" << g.dsd << "\n";
    side << "detector_rows=" << g.detector_rows << "\n";
    side << "detector_cols=" << g.detector_cols << "\n";
    side << "detector_spacing=" << g.detector_spacing << "\n";
    side << "translation=" << g.translation.x << " " << g.translation.y << " "
         << g.translation.z << "\n";
    std::filesystem::path txt = pgm_path;
    txt.replace_extension(".txt");
    detail::write_file(txt, side.str());
}

inline XRayView read_xray(const std::filesystem::path& pgm_path) {
    const std::string bytes = detail::read_file(pgm_path);
    std::istringstream head(bytes);
    std::string tag;
    std::size_t cols = 0, rows = 0, maxval = 0;
    head >> tag >> cols >> rows >> maxval;
    if (tag != "P5" || maxval != 65535)
        throw io_error("x-ray: expected 16-bit binary PGM: " +
                       pgm_path.string());
    head.get();  // single whitespace after maxval
    const std::size_t offset = static_cast<std::size_t>(head.tellg());
    if (bytes.size() < offset + 2 * rows * cols)
        throw io_error("x-ray: truncated PGM: " + pgm_path.string());

    std::filesystem::path txt = pgm_path;
    txt.replace_extension(".txt");
    std::ifstream side(txt);
    if (!side) throw io_error("x-ray: missing sidecar: " + txt.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(side, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw io_error("x-ray sidecar: missing key '" + std::string(key) +
                           "' in " + txt.string());
        return it->second;
    };

    ProjectionGeometry g;
    g.beam = get("beam") == "cone" ? BeamType::Cone : BeamType::Parallel;
    g.angle_deg = std::stod(get("angle_deg"));
    g.dso = std::stod(get("dso"));
    g.dsd = std::stod(get("dsd"));
    g.detector_rows = std::stoul(get("detector_rows"));
    g.detector_cols = std::stoul(get("detector_cols"));
    g.detector_spacing = std::stod(get("detector_spacing"));
    {
        std::istringstream t(get("translation"));
        t >> g.translation.x >> g.translation.y >> g.translation.z;
    }
    if (g.detector_rows != rows || g.detector_cols != cols)
        throw io_error("x-ray: sidecar geometry disagrees with PGM size: " +
                       pgm_path.string());
    const double scale = std::stod(get("scale"));

    Image2D img(rows, cols, g.detector_spacing);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const auto hi = static_cast<std::uint8_t>(bytes[offset + 2 * i]);
        const auto lo = static_cast<std::uint8_t>(bytes[offset + 2 * i + 1]);
        img.data[i] = static_cast<double>((hi << 8) | lo) / 65535.0 * scale;
    }
    return {std::move(img), g};
}

/// Grayscale slice render without a geometry sidecar (report output).
inline void write_pgm16(const std::filesystem::path& path, const Image2D& img) {
    double peak = 0.0;
    for (double v : img.data) peak = std::max(peak, v);
    std::string buf;
    buf += "P5\n" + std::to_string(img.cols) + " " + std::to_string(img.rows) +
           "\n65535\n";
    const double scale = peak > 0.0 ? 65535.0 / peak : 0.0;
    for (double v : img.data) {
        const long q = std::lround(std::clamp(v, 0.0, peak) * scale);
        const auto s = static_cast<std::uint16_t>(std::clamp(q, 0L, 65535L));
        buf.push_back(static_cast<char>(s >> 8));
        buf.push_back(static_cast<char>(s & 0xFF));
    }
    detail::write_file(path, buf);
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header) {
        append_row(header);
    }

    void append_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += cells[i];
        }
        buf_ += '\n';
    }

    /// Formats metric values; infinities render as "inf" rather than failing.
    static std::string num(double v, int precision = 9) {
        if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
        std::ostringstream ss;
        ss.precision(precision);
        ss << v;
        return ss.str();
    }

    const std::string& str() const { return buf_; }
    void save(const std::filesystem::path& path) const {
        detail::write_file(path, buf_);
    }

  private:
    std::string buf_;
};

}  // namespace sparsect
