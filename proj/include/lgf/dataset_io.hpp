#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lgf::data {

/// Grayscale images in [0, 1], row-major, one after another.
struct ImageSet {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<double> pixels;

    std::size_t pixels_per_image() const noexcept { return rows * cols; }
    std::span<const double> image(std::size_t i) const noexcept {
        return {pixels.data() + i * rows * cols, rows * cols};
    }
    std::span<double> image(std::size_t i) noexcept { return {pixels.data() + i * rows * cols, rows * cols}; }
};

inline constexpr int kNumClasses = 10;

struct LabeledImages {
    ImageSet images;
    std::vector<int> labels; // each in [0, 10)

    std::size_t size() const noexcept { return labels.size(); }
    /// Throws InvalidArgument on count mismatch or labels outside [0, 10).
    void validate() const;
};

// IDX files, gzip-compressed or plain (detected on read). Pixels are scaled by
// 1/255 on read and rounded back on write.
ImageSet read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);
/// Writes gzip when the path ends in ".gz". Pixels must lie in [0, 1].
void write_idx_images(const std::filesystem::path& path, const ImageSet& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

enum class Split { Train, Test };

/// Reads {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz] from dir.
LabeledImages load_mnist(const std::filesystem::path& dir, Split split);

/// Bilinear rotation about the image centre, counter-clockwise as displayed,
/// zero fill. Multiples of 90° are exact index permutations on square images.
std::vector<double> rotate_image(std::span<const double> img, std::size_t rows, std::size_t cols,
                                 double angle_degrees);

/// Class-stratified sample of n items in original order. Quotas are
/// proportional to class counts, remainders go to the largest fractional
/// parts (lower class first on ties).
LabeledImages subset(const LabeledImages& data, std::size_t n, std::uint64_t seed);

/// Rotates image i by an angle drawn uniformly from `angles`; seeded.
LabeledImages rotate_dataset(const LabeledImages& data, std::span<const double> angles, std::uint64_t seed);

/// 0, 1, …, 359: the default MNIST-rot synthesis list.
std::vector<double> whole_degree_angles();

} // namespace lgf::data
