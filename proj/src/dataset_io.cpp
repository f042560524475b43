#include "lgf/dataset_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

#include "lgf/error.hpp"
#include "lgf/rng.hpp"

namespace lgf::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

struct GzCloser {
    void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

class IdxReader {
public:
    explicit IdxReader(const std::filesystem::path& path) : path_(path) {
        std::error_code ec;
        if (!std::filesystem::is_regular_file(path, ec)) throw IoError(path.string() + ": no such file");
        file_.reset(gzopen(path.c_str(), "rb"));
        if (!file_) throw IoError(path.string() + ": cannot open");
    }

    void read(void* dst, std::size_t n, const char* what) {
        auto* out = static_cast<unsigned char*>(dst);
        while (n > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(file_.get(), out, chunk);
            if (got < 0) throw IoError(path_.string() + ": decompression failed");
            if (got == 0) throw IoError(path_.string() + ": truncated " + what);
            out += got;
            n -= static_cast<std::size_t>(got);
        }
    }

    std::uint32_t be32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    }

    void expect_end() {
        unsigned char extra;
        if (gzread(file_.get(), &extra, 1) != 0) throw IoError(path_.string() + ": trailing bytes after payload");
    }

    void expect_magic(std::uint32_t magic) {
        const std::uint32_t got = be32("header");
        if (got != magic) {
            char buf[64];
            std::snprintf(buf, sizeof buf, ": bad magic 0x%08x (expected 0x%08x)", got, magic);
            throw IoError(path_.string() + buf);
        }
    }

private:
    std::filesystem::path path_;
    GzHandle file_;
};

class IdxWriter {
public:
    explicit IdxWriter(const std::filesystem::path& path) : path_(path) {
        const bool gz = path.extension() == ".gz";
        file_.reset(gzopen(path.c_str(), gz ? "wb9" : "wbT"));
        if (!file_) throw IoError(path.string() + ": cannot open for writing");
    }
    void write(const void* src, std::size_t n) {
        if (n > 0 && gzwrite(file_.get(), src, static_cast<unsigned>(n)) != static_cast<int>(n))
            throw IoError(path_.string() + ": write failed");
    }
    void be32(std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        write(b, 4);
    }
    void close() {
        if (gzclose(file_.release()) != Z_OK) throw IoError(path_.string() + ": close failed");
    }

private:
    std::filesystem::path path_;
    GzHandle file_;
};

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
    for (const char* ext : {"", ".gz"}) {
        const auto p = dir / (stem + ext);
        std::error_code ec;
        if (std::filesystem::is_regular_file(p, ec)) return p;
    }
    throw IoError((dir / stem).string() + "[.gz]: not found");
}

} // namespace

void LabeledImages::validate() const {
    if (images.count != labels.size())
        throw InvalidArgument(std::to_string(images.count) + " images but " + std::to_string(labels.size()) + " labels");
    if (images.pixels.size() != images.count * images.rows * images.cols)
        throw InvalidArgument("pixel buffer does not match the image dimensions");
    for (int l : labels)
        if (l < 0 || l >= kNumClasses) throw InvalidArgument("label " + std::to_string(l) + " outside [0, 10)");
}

ImageSet read_idx_images(const std::filesystem::path& path) {
    IdxReader r(path);
    r.expect_magic(kImageMagic);
    ImageSet s;
    s.count = r.be32("header");
    s.rows = r.be32("header");
    s.cols = r.be32("header");
    if (s.rows == 0 || s.cols == 0) throw IoError(path.string() + ": zero image dimension");
    const std::uint64_t total = std::uint64_t{s.count} * s.rows * s.cols;
    if (std::uint64_t{s.rows} * s.cols > kMaxElements || total > kMaxElements)
        throw IoError(path.string() + ": dimensions overflow (" + std::to_string(s.count) + "x" + std::to_string(s.rows) +
                      "x" + std::to_string(s.cols) + ")");
    std::vector<unsigned char> raw(total);
    r.read(raw.data(), raw.size(), "pixel payload");
    r.expect_end();
    s.pixels.resize(total);
    std::transform(raw.begin(), raw.end(), s.pixels.begin(), [](unsigned char b) { return b / 255.0; });
    return s;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
    IdxReader r(path);
    r.expect_magic(kLabelMagic);
    const std::uint32_t count = r.be32("header");
    if (count > kMaxElements) throw IoError(path.string() + ": label count overflows");
    std::vector<unsigned char> raw(count);
    r.read(raw.data(), raw.size(), "label payload");
    r.expect_end();
    return std::vector<int>(raw.begin(), raw.end());
}

void write_idx_images(const std::filesystem::path& path, const ImageSet& images) {
    if (images.pixels.size() != images.count * images.rows * images.cols)
        throw InvalidArgument("write_idx_images: pixel buffer does not match the dimensions");
    for (std::size_t d : {images.count, images.rows, images.cols})
        if (d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("write_idx_images: dimension too large");
    std::vector<unsigned char> raw(images.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double p = images.pixels[i];
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("write_idx_images: pixel outside [0, 1]");
        raw[i] = static_cast<unsigned char>(std::lround(p * 255.0));
    }
    IdxWriter w(path);
    w.be32(kImageMagic);
    w.be32(static_cast<std::uint32_t>(images.count));
    w.be32(static_cast<std::uint32_t>(images.rows));
    w.be32(static_cast<std::uint32_t>(images.cols));
    w.write(raw.data(), raw.size());
    w.close();
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
    std::vector<unsigned char> raw(labels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (labels[i] < 0 || labels[i] > 255) throw InvalidArgument("write_idx_labels: label does not fit a byte");
        raw[i] = static_cast<unsigned char>(labels[i]);
    }
    IdxWriter w(path);
    w.be32(kLabelMagic);
    w.be32(static_cast<std::uint32_t>(labels.size()));
    w.write(raw.data(), raw.size());
    w.close();
}

LabeledImages load_mnist(const std::filesystem::path& dir, Split split) {
    const std::string prefix = split == Split::Train ? "train" : "t10k";
    LabeledImages d;
    d.images = read_idx_images(find_file(dir, prefix + "-images-idx3-ubyte"));
    d.labels = read_idx_labels(find_file(dir, prefix + "-labels-idx1-ubyte"));
    try {
        d.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(dir.string() + ": " + e.what());
    }
    return d;
}

std::vector<double> rotate_image(std::span<const double> img, std::size_t rows, std::size_t cols, double angle_degrees) {
    if (img.size() != rows * cols) throw InvalidArgument("rotate_image: buffer does not match the dimensions");
    if (!(angle_degrees >= 0.0 && angle_degrees < 360.0)) throw InvalidArgument("rotate_image: angle must lie in [0, 360)");
    double c, s;
    if (angle_degrees == 0.0) {
        c = 1.0, s = 0.0;
    } else if (angle_degrees == 90.0) {
        c = 0.0, s = 1.0;
    } else if (angle_degrees == 180.0) {
        c = -1.0, s = 0.0;
    } else if (angle_degrees == 270.0) {
        c = 0.0, s = -1.0;
    } else {
        const double t = angle_degrees * std::numbers::pi / 180.0;
        c = std::cos(t), s = std::sin(t);
    }
    const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
    const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
    const auto ih = static_cast<std::ptrdiff_t>(rows), iw = static_cast<std::ptrdiff_t>(cols);
    auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        return (y < 0 || x < 0 || y >= ih || x >= iw) ? 0.0 : img[static_cast<std::size_t>(y * iw + x)];
    };
    std::vector<double> out(rows * cols);
    for (std::size_t y = 0; y < rows; ++y)
        for (std::size_t x = 0; x < cols; ++x) {
            // inverse map: output (dx, dy) comes from the source rotated by −angle
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = c * dx - s * dy + cx;
            const double sy = s * dx + c * dy + cy;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
            double v = (1 - ay) * ((1 - ax) * at(y0, x0) + (ax > 0 ? ax * at(y0, x0 + 1) : 0.0));
            if (ay > 0) v += ay * ((1 - ax) * at(y0 + 1, x0) + (ax > 0 ? ax * at(y0 + 1, x0 + 1) : 0.0));
            out[y * cols + x] = v;
        }
    return out;
}

LabeledImages subset(const LabeledImages& data, std::size_t n, std::uint64_t seed) {
    data.validate();
    if (n > data.size())
        throw InvalidArgument("subset: requested " + std::to_string(n) + " of " + std::to_string(data.size()) + " items");
    std::vector<std::vector<std::size_t>> by_class(kNumClasses);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

    std::vector<std::size_t> quota(kNumClasses);
    std::vector<std::pair<double, int>> remainder;
    std::size_t assigned = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) / static_cast<double>(data.size());
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[c];
        remainder.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k) {
        const int c = remainder[k % remainder.size()].second;
        if (quota[c] < by_class[c].size()) {
            ++quota[c];
            ++assigned;
        }
    }

    std::mt19937_64 g(seed);
    std::vector<std::size_t> picked;
    picked.reserve(n);
    for (int c = 0; c < kNumClasses; ++c) {
        auto& idx = by_class[c];
        rng::shuffle(std::span(idx), g);
        picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(picked.begin(), picked.end());

    LabeledImages out;
    out.images.count = n;
    out.images.rows = data.images.rows;
    out.images.cols = data.images.cols;
    out.images.pixels.reserve(n * data.images.pixels_per_image());
    for (std::size_t i : picked) {
        const auto img = data.images.image(i);
        out.images.pixels.insert(out.images.pixels.end(), img.begin(), img.end());
        out.labels.push_back(data.labels[i]);
    }
    return out;
}

LabeledImages rotate_dataset(const LabeledImages& data, std::span<const double> angles, std::uint64_t seed) {
    data.validate();
    if (angles.empty()) throw InvalidArgument("rotate_dataset: empty angle list");
    LabeledImages out = data;
    std::mt19937_64 g(seed);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double a = angles[rng::index(g, angles.size())];
        const auto rotated = rotate_image(data.images.image(i), data.images.rows, data.images.cols, a);
        std::ranges::copy(rotated, out.images.image(i).begin());
    }
    return out;
}

std::vector<double> whole_degree_angles() {
    std::vector<double> a(360);
    std::iota(a.begin(), a.end(), 0.0);
    return a;
}

} // namespace lgf::data
