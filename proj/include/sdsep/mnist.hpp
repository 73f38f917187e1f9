#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdsep/tensor.hpp"

namespace sdsep::mnist {

constexpr std::size_t kRaw = 28;
constexpr std::size_t kSide = 32;
constexpr std::size_t kPixels = kSide * kSide;

struct IdxArray {
    std::uint8_t type = 0x08;  // element type code; only unsigned bytes are supported
    std::vector<std::size_t> dims;
    std::vector<std::uint8_t> data;
};

// Parses an IDX file with u8 elements. Errors carry the byte offset.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);

float normalize(std::uint8_t p);
std::uint8_t denormalize(float v);

// Images in [-1,1], padded from 28x28 to 32x32 with -1. Immutable once built.
class ImageSet {
  public:
    ImageSet() = default;
    ImageSet(std::vector<float> pixels, std::vector<std::uint8_t> labels, std::string source);

    std::size_t size() const { return labels_.size(); }
    std::span<const float> image(std::size_t i) const {
        return {pixels_.data() + i * kPixels, kPixels};
    }
    std::span<const float> pixels() const { return pixels_; }
    const std::vector<std::uint8_t>& labels() const { return labels_; }
    const std::string& source() const { return source_; }

    // [n,1,32,32] tensor of the given items.
    Tensor<float> gather(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> indices_of_label(std::uint8_t label) const;

  private:
    std::vector<float> pixels_;
    std::vector<std::uint8_t> labels_;
    std::string source_;
};

ImageSet normalize_pad(const IdxArray& images, const IdxArray& labels, std::string source);

enum class Split { train, test };

// Looks for <prefix>-images-idx3-ubyte[.gz] and <prefix>-labels-idx1-ubyte[.gz].
ImageSet load(const std::filesystem::path& dir, Split split);
std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem);

// Seeded shuffled minibatches. Epoch e uses permutation seed derive_seed(seed, e);
// the trailing partial batch is dropped.
class BatchStream {
  public:
    BatchStream(const ImageSet& set, std::size_t batch_size, std::uint64_t seed);
    std::size_t batches_per_epoch() const { return set_->size() / batch_; }
    std::vector<std::size_t> indices(std::size_t epoch, std::size_t batch) const;
    Tensor<float> batch(std::size_t epoch, std::size_t batch) const;
    // Global iteration i maps to (i / batches_per_epoch, i % batches_per_epoch).
    Tensor<float> at_iteration(std::size_t iteration) const;

  private:
    const std::vector<std::size_t>& permutation(std::size_t epoch) const;

    const ImageSet* set_;
    std::size_t batch_;
    std::uint64_t seed_;
    mutable std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    mutable std::vector<std::size_t> perm_;
};

}  // namespace sdsep::mnist
