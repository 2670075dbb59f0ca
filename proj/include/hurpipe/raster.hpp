#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "hurpipe/errors.hpp"

namespace hurpipe::raster {

constexpr std::int16_t kIgnoreLabel = -1;
constexpr float kDefaultNodata = -std::numeric_limits<float>::infinity();

// Affine pixel  <->  world mapping, GDAL-style. `pixel_height` is negative
// for north-up rasters. Continuous pixel coordinates place (0, 0) at the
// top-left corner of the top-left pixel; pixel centers sit at +0.5.
struct GeoTransform {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_width = 1.0;
    double pixel_height = -1.0;
    double rot_x = 0.0;
    double rot_y = 0.0;
    std::uint32_t epsg = 0;

    void validate() const {
        if (pixel_width == 0.0 || pixel_height == 0.0)
            throw ConfigError("geotransform pixel size must be nonzero");
        if (pixel_width * pixel_height - rot_x * rot_y == 0.0)
            throw ConfigError("geotransform is singular");
    }

    std::pair<double, double> world(double col, double row) const {
        return {origin_x + col * pixel_width + row * rot_x,
                origin_y + col * rot_y + row * pixel_height};
    }

    std::pair<double, double> pixel(double x, double y) const {
        const double det = pixel_width * pixel_height - rot_x * rot_y;
        const double dx = x - origin_x;
        const double dy = y - origin_y;
        return {(dx * pixel_height - dy * rot_x) / det,
                (dy * pixel_width - dx * rot_y) / det};
    }

    bool operator==(const GeoTransform&) const = default;
};

// Multi-band float32 pixel grid. Bands are stored row-major, one buffer per
// band; a pixel is missing when it carries the `nodata` sentinel.
struct RasterTile {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::string> band_names;
    std::vector<std::vector<float>> bands;
    float nodata = kDefaultNodata;
    GeoTransform transform;

    std::size_t pixel_count() const { return std::size_t(width) * height; }
    std::size_t band_count() const { return bands.size(); }

    float at(std::size_t band, std::uint32_t x, std::uint32_t y) const {
        return bands[band][std::size_t(y) * width + x];
    }
    void set(std::size_t band, std::uint32_t x, std::uint32_t y, float v) {
        bands[band][std::size_t(y) * width + x] = v;
    }
    bool is_nodata(float v) const {
        return std::bit_cast<std::uint32_t>(v) == std::bit_cast<std::uint32_t>(nodata);
    }

    void validate() const {
        transform.validate();
        if (bands.empty()) throw ShapeError("raster tile has no bands");
        if (band_names.size() != bands.size())
            throw ShapeError("band name count does not match band count");
        for (const auto& b : bands)
            if (b.size() != pixel_count())
                throw ShapeError("band buffer size does not match tile dimensions");
    }

    static RasterTile create(std::uint32_t w, std::uint32_t h,
                             std::vector<std::string> names,
                             GeoTransform t = {}, float fill = 0.0f) {
        RasterTile out;
        out.width = w;
        out.height = h;
        out.band_names = std::move(names);
        out.bands.assign(out.band_names.size(),
                         std::vector<float>(std::size_t(w) * h, fill));
        out.transform = t;
        return out;
    }
};

// Exact bit-level equality; NaN payloads and signed zeros must survive I/O.
inline bool bitwise_equal(const RasterTile& a, const RasterTile& b) {
    if (a.width != b.width || a.height != b.height) return false;
    if (a.band_names != b.band_names) return false;
    if (std::bit_cast<std::uint32_t>(a.nodata) != std::bit_cast<std::uint32_t>(b.nodata))
        return false;
    if (!(a.transform == b.transform)) return false;
    if (a.bands.size() != b.bands.size()) return false;
    for (std::size_t i = 0; i < a.bands.size(); ++i) {
        if (a.bands[i].size() != b.bands[i].size()) return false;
        if (std::memcmp(a.bands[i].data(), b.bands[i].data(),
                        a.bands[i].size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

// Single-band class-id grid. Values live in {-1, 0, .., num_classes-1};
// -1 marks pixels excluded from loss and metrics.
struct LabelRaster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::int16_t> values;
    GeoTransform transform;
    std::uint8_t num_classes = 8;

    std::size_t pixel_count() const { return std::size_t(width) * height; }

    std::int16_t at(std::uint32_t x, std::uint32_t y) const {
        return values[std::size_t(y) * width + x];
    }
    void set(std::uint32_t x, std::uint32_t y, std::int16_t v) {
        values[std::size_t(y) * width + x] = v;
    }

    void validate() const {
        transform.validate();
        if (values.size() != pixel_count())
            throw ShapeError("label buffer size does not match dimensions");
    }

    static LabelRaster create(std::uint32_t w, std::uint32_t h, GeoTransform t = {},
                              std::int16_t fill = kIgnoreLabel,
                              std::uint8_t num_classes = 8) {
        LabelRaster out;
        out.width = w;
        out.height = h;
        out.values.assign(std::size_t(w) * h, fill);
        out.transform = t;
        out.num_classes = num_classes;
        return out;
    }
};

inline bool bitwise_equal(const LabelRaster& a, const LabelRaster& b) {
    return a.width == b.width && a.height == b.height && a.values == b.values &&
           a.transform == b.transform;
}

// ---------------------------------------------------------------------------
// HURT tile container (little-endian):
//   magic "HURT" | version u16 (=1) | kind u8 (0 = f32 bands, 1 = i16 labels)
//   band_count u8 | width u32 | height u32 | nodata f32
//   geotransform 6 x f64 (origin_x, pixel_width, rot_x, origin_y, rot_y,
//   pixel_height) | epsg u32 | per band: name length u16 + UTF-8 bytes
//   payload: band-major raw samples
// ---------------------------------------------------------------------------

constexpr std::uint16_t kHurtVersion = 1;

enum class TileKind : std::uint8_t { bands = 0, labels = 1 };

// Serialized header size for a given list of band-name byte lengths.
inline std::size_t hurt_header_size(const std::vector<std::size_t>& name_lengths) {
    std::size_t n = 4 + 2 + 1 + 1 + 4 + 4 + 4 + 6 * 8 + 4;
    for (std::size_t len : name_lengths) n += 2 + len;
    return n;
}

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}
inline void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(const std::string& buf, std::string path)
        : buf_(buf), path_(std::move(path)) {}

    std::uint8_t u8() {
        need(1);
        return std::uint8_t(buf_[pos_++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(std::uint8_t(buf_[pos_])) |
                          std::uint16_t(std::uint8_t(buf_[pos_ + 1])) << 8;
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(std::uint8_t(buf_[pos_ + std::size_t(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(std::uint8_t(buf_[pos_ + std::size_t(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (buf_.size() - pos_ < n)
            throw CorruptionError("truncated HURT payload in " + path_);
    }
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline void write_header(std::string& out, TileKind kind, std::uint8_t band_count,
                         std::uint32_t w, std::uint32_t h, float nodata,
                         const GeoTransform& t,
                         const std::vector<std::string>& names) {
    out.append("HURT");
    put_u16(out, kHurtVersion);
    out.push_back(char(std::uint8_t(kind)));
    out.push_back(char(band_count));
    put_u32(out, w);
    put_u32(out, h);
    put_f32(out, nodata);
    put_f64(out, t.origin_x);
    put_f64(out, t.pixel_width);
    put_f64(out, t.rot_x);
    put_f64(out, t.origin_y);
    put_f64(out, t.rot_y);
    put_f64(out, t.pixel_height);
    put_u32(out, t.epsg);
    for (const auto& n : names) {
        if (n.size() > 0xffff) throw ConfigError("band name longer than 65535 bytes");
        put_u16(out, std::uint16_t(n.size()));
        out.append(n);
    }
}

inline void atomic_write(const std::filesystem::path& path, const std::string& data) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + tmp.string());
        out.write(data.data(), std::streamsize(data.size()));
        if (!out) throw DataError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace detail

inline void write_tile(const RasterTile& t, const std::filesystem::path& path) {
    t.validate();
    if (t.bands.size() > 255) throw ConfigError("at most 255 bands per tile");
    std::string out;
    out.reserve(128 + t.bands.size() * t.pixel_count() * 4);
    detail::write_header(out, TileKind::bands, std::uint8_t(t.bands.size()), t.width,
                         t.height, t.nodata, t.transform, t.band_names);
    for (const auto& band : t.bands)
        for (float v : band) detail::put_f32(out, v);
    detail::atomic_write(path, out);
}

inline void write_tile(const LabelRaster& l, const std::filesystem::path& path) {
    l.validate();
    std::string out;
    out.reserve(128 + l.values.size() * 2);
    detail::write_header(out, TileKind::labels, 1, l.width, l.height, kDefaultNodata,
                         l.transform, {"labels"});
    for (std::int16_t v : l.values) detail::put_u16(out, std::uint16_t(v));
    detail::atomic_write(path, out);
}

using Tile = std::variant<RasterTile, LabelRaster>;

inline Tile read_tile(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open tile: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    detail::Reader r(buf, path.string());
    if (r.bytes(4) != "HURT")
        throw FormatError("not a HURT tile (bad magic): " + path.string());
    const std::uint16_t version = r.u16();
    if (version != kHurtVersion)
        throw VersionError("unsupported HURT version " + std::to_string(version) +
                           " in " + path.string());
    const std::uint8_t kind = r.u8();
    const std::uint8_t band_count = r.u8();
    const std::uint32_t w = r.u32();
    const std::uint32_t h = r.u32();
    const float nodata = r.f32();
    GeoTransform t;
    t.origin_x = r.f64();
    t.pixel_width = r.f64();
    t.rot_x = r.f64();
    t.origin_y = r.f64();
    t.rot_y = r.f64();
    t.pixel_height = r.f64();
    t.epsg = r.u32();
    std::vector<std::string> names;
    names.reserve(band_count);
    for (std::uint8_t i = 0; i < band_count; ++i) names.push_back(r.bytes(r.u16()));

    const std::size_t n = std::size_t(w) * h;
    if (kind == std::uint8_t(TileKind::bands)) {
        RasterTile out;
        out.width = w;
        out.height = h;
        out.band_names = std::move(names);
        out.nodata = nodata;
        out.transform = t;
        out.bands.assign(band_count, {});
        for (auto& band : out.bands) {
            band.resize(n);
            for (std::size_t i = 0; i < n; ++i) band[i] = r.f32();
        }
        if (r.remaining() != 0)
            throw CorruptionError("trailing bytes after payload: " + path.string());
        return out;
    }
    if (kind == std::uint8_t(TileKind::labels)) {
        if (band_count != 1)
            throw CorruptionError("label tile must have exactly one band: " +
                                  path.string());
        LabelRaster out;
        out.width = w;
        out.height = h;
        out.transform = t;
        out.values.resize(n);
        std::int16_t max_v = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out.values[i] = std::int16_t(r.u16());
            max_v = std::max(max_v, out.values[i]);
        }
        if (r.remaining() != 0)
            throw CorruptionError("trailing bytes after payload: " + path.string());
        // K is not part of the container; recover a usable lower bound.
        out.num_classes = std::uint8_t(std::clamp<int>(max_v + 1, 2, 255));
        return out;
    }
    throw FormatError("unknown HURT tile kind " + std::to_string(kind) + " in " +
                      path.string());
}

inline RasterTile read_raster_tile(const std::filesystem::path& path) {
    Tile t = read_tile(path);
    if (auto* p = std::get_if<RasterTile>(&t)) return std::move(*p);
    throw FormatError("expected a band tile, found labels: " + path.string());
}

inline LabelRaster read_label_raster(const std::filesystem::path& path) {
    Tile t = read_tile(path);
    if (auto* p = std::get_if<LabelRaster>(&t)) return std::move(*p);
    throw FormatError("expected a label tile, found bands: " + path.string());
}

// ---------------------------------------------------------------------------
// Sample grid geometry
// ---------------------------------------------------------------------------

struct WorldRect {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

struct GridTile {
    std::string id;
    std::string country;
    WorldRect bounds;
    std::uint32_t width_px = 0;
    std::uint32_t height_px = 0;

    GeoTransform transform() const {
        GeoTransform t;
        t.origin_x = bounds.min_x;
        t.origin_y = bounds.max_y;
        t.pixel_width = bounds.width() / width_px;
        t.pixel_height = -bounds.height() / height_px;
        return t;
    }
};

struct TileGrid {
    std::vector<GridTile> tiles;
    double spacing_m = 10000.0;
    double pixel_size_m = 10.0;
};

constexpr double kTileSpacingM = 10000.0;
constexpr double kPixelSizeM = 10.0;

// Lays sample points on a regular grid and cuts one square tile around each
// point. Tiles that would extend past the bounding box are dropped rather
// than clipped, so a box smaller than one tile yields an empty grid.
inline TileGrid make_grid(const WorldRect& bbox,
                          const std::function<std::string(double, double)>& country_of,
                          double spacing_m = kTileSpacingM,
                          double pixel_size_m = kPixelSizeM) {
    if (bbox.width() <= 0.0 || bbox.height() <= 0.0)
        throw ConfigError("grid bounding box is degenerate");
    if (spacing_m <= 0.0 || pixel_size_m <= 0.0)
        throw ConfigError("grid spacing and pixel size must be positive");

    const double eps = 1e-9 * spacing_m;
    const auto fit = [&](double extent) {
        return std::int64_t(std::floor(extent / spacing_m + eps));
    };
    const std::int64_t nx = fit(bbox.width());
    const std::int64_t ny = fit(bbox.height());
    const auto px = std::uint32_t(std::llround(spacing_m / pixel_size_m));

    TileGrid grid;
    grid.spacing_m = spacing_m;
    grid.pixel_size_m = pixel_size_m;
    for (std::int64_t iy = 0; iy < ny; ++iy) {
        for (std::int64_t ix = 0; ix < nx; ++ix) {
            GridTile tile;
            tile.bounds.min_x = bbox.min_x + double(ix) * spacing_m;
            tile.bounds.min_y = bbox.min_y + double(iy) * spacing_m;
            tile.bounds.max_x = tile.bounds.min_x + spacing_m;
            tile.bounds.max_y = tile.bounds.min_y + spacing_m;
            tile.width_px = px;
            tile.height_px = px;
            tile.id = "x" + std::to_string(ix) + "_y" + std::to_string(iy);
            const double cx = tile.bounds.min_x + spacing_m / 2.0;
            const double cy = tile.bounds.min_y + spacing_m / 2.0;
            tile.country = country_of(cx, cy);
            grid.tiles.push_back(std::move(tile));
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour resampling and band normalization
// ---------------------------------------------------------------------------

inline RasterTile resample_nearest(const RasterTile& src, double target_pixel_size) {
    src.validate();
    if (target_pixel_size <= 0.0)
        throw ConfigError("target pixel size must be positive");
    if (src.transform.rot_x != 0.0 || src.transform.rot_y != 0.0)
        throw ConfigError("resampling requires an axis-aligned geotransform");

    const double src_w = std::abs(src.transform.pixel_width);
    const double src_h = std::abs(src.transform.pixel_height);
    const double extent_x = src_w * src.width;
    const double extent_y = src_h * src.height;
    const auto out_w = std::uint32_t(std::max<std::int64_t>(
        1, std::llround(extent_x / target_pixel_size)));
    const auto out_h = std::uint32_t(std::max<std::int64_t>(
        1, std::llround(extent_y / target_pixel_size)));

    RasterTile out = RasterTile::create(out_w, out_h, src.band_names, src.transform);
    out.nodata = src.nodata;
    out.transform.pixel_width = std::copysign(target_pixel_size, src.transform.pixel_width);
    out.transform.pixel_height = std::copysign(target_pixel_size, src.transform.pixel_height);

    const double ratio_x = target_pixel_size / src_w;
    const double ratio_y = target_pixel_size / src_h;
    for (std::uint32_t y = 0; y < out_h; ++y) {
        const auto sy = std::uint32_t(std::clamp<std::int64_t>(
            std::int64_t(std::floor((double(y) + 0.5) * ratio_y)), 0, src.height - 1));
        for (std::uint32_t x = 0; x < out_w; ++x) {
            const auto sx = std::uint32_t(std::clamp<std::int64_t>(
                std::int64_t(std::floor((double(x) + 0.5) * ratio_x)), 0, src.width - 1));
            for (std::size_t b = 0; b < src.bands.size(); ++b)
                out.set(b, x, y, src.at(b, sx, sy));
        }
    }
    return out;
}

// Per-band (min, max) scaling into [0, 1]. Pixels with no valid observation
// are assigned zero so downstream consumers never see the sentinel.
inline RasterTile normalize_bands(const RasterTile& t,
                                  const std::vector<std::pair<double, double>>& ranges) {
    t.validate();
    if (ranges.size() != t.bands.size())
        throw ConfigError("need one (min, max) range per band");
    for (const auto& [lo, hi] : ranges)
        if (!(hi > lo)) throw ConfigError("band range max must exceed min");

    RasterTile out = t;
    for (std::size_t b = 0; b < out.bands.size(); ++b) {
        const double lo = ranges[b].first;
        const double span = ranges[b].second - ranges[b].first;
        for (float& v : out.bands[b]) {
            if (t.is_nodata(v)) {
                v = 0.0f;
            } else {
                v = float(std::clamp((double(v) - lo) / span, 0.0, 1.0));
            }
        }
    }
    return out;
}

} // namespace hurpipe::raster
