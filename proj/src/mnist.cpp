#include "sdsep/mnist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"
#include "sdsep/rng.hpp"

namespace sdsep::mnist {

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw ParseError("IDX header truncated", bytes.size());
    if (bytes[0] != 0 || bytes[1] != 0) throw ParseError("bad IDX magic", 0);
    IdxArray out;
    out.type = bytes[2];
    if (out.type != 0x08) throw ParseError("unsupported IDX element type", 2);
    const std::size_t rank = bytes[3];
    if (rank == 0) throw ParseError("IDX rank is zero", 3);
    const std::size_t header = 4 + 4 * rank;
    std::size_t total = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        const std::size_t off = 4 + 4 * d;
        if (off + 4 > bytes.size()) throw ParseError("IDX dimensions truncated", bytes.size());
        const std::size_t n = (std::size_t(bytes[off]) << 24) | (std::size_t(bytes[off + 1]) << 16) |
                              (std::size_t(bytes[off + 2]) << 8) | std::size_t(bytes[off + 3]);
        if (n != 0 && total > (std::numeric_limits<std::size_t>::max() - header) / n)
            throw ParseError("IDX dimension product overflows", off);
        total *= n;
        out.dims.push_back(n);
    }
    if (bytes.size() < header + total) throw ParseError("IDX payload truncated", bytes.size());
    if (bytes.size() > header + total) throw ParseError("trailing bytes after IDX payload", header + total);
    out.data.assign(bytes.begin() + header, bytes.begin() + header + total);
    return out;
}

std::vector<std::uint8_t> encode_idx(const IdxArray& a) {
    std::vector<std::uint8_t> out{0, 0, a.type, static_cast<std::uint8_t>(a.dims.size())};
    for (std::size_t d : a.dims)
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(d >> s));
    out.insert(out.end(), a.data.begin(), a.data.end());
    return out;
}

float normalize(std::uint8_t p) { return static_cast<float>(p) / 255.0f * 2.0f - 1.0f; }

std::uint8_t denormalize(float v) {
    const double p = std::clamp((static_cast<double>(v) + 1.0) / 2.0 * 255.0, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::lround(p));
}

ImageSet::ImageSet(std::vector<float> pixels, std::vector<std::uint8_t> labels, std::string source)
    : pixels_(std::move(pixels)), labels_(std::move(labels)), source_(std::move(source)) {
    if (pixels_.size() != labels_.size() * kPixels)
        throw ShapeError("ImageSet: pixel buffer does not match label count");
}

Tensor<float> ImageSet::gather(std::span<const std::size_t> indices) const {
    std::vector<float> out(indices.size() * kPixels);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw ContractError("ImageSet index out of range");
        std::copy_n(pixels_.data() + indices[i] * kPixels, kPixels, out.data() + i * kPixels);
    }
    return Tensor<float>::from({indices.size(), 1, kSide, kSide}, std::move(out));
}

std::vector<std::size_t> ImageSet::indices_of_label(std::uint8_t label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) out.push_back(i);
    return out;
}

ImageSet normalize_pad(const IdxArray& images, const IdxArray& labels, std::string source) {
    if (images.dims.size() != 3 || images.dims[1] != kRaw || images.dims[2] != kRaw)
        throw ShapeError("expected IDX images of shape [N,28,28]");
    if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
        throw ShapeError("label count does not match image count");
    const std::size_t n = images.dims[0];
    for (std::size_t i = 0; i < n; ++i)
        if (labels.data[i] > 9) throw ParseError("label outside 0-9", 8 + i);
    const std::size_t pad = (kSide - kRaw) / 2;
    std::vector<float> pixels(n * kPixels, -1.0f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < kRaw; ++r)
            for (std::size_t c = 0; c < kRaw; ++c)
                pixels[i * kPixels + (r + pad) * kSide + c + pad] =
                    normalize(images.data[(i * kRaw + r) * kRaw + c]);
    return ImageSet(std::move(pixels), labels.data, std::move(source));
}

std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
    for (const auto* suffix : {"", ".gz"}) {
        auto p = dir / (stem + suffix);
        if (std::filesystem::exists(p)) return p;
    }
    throw IoError("MNIST file not found", (dir / stem).string() + "[.gz]");
}

ImageSet load(const std::filesystem::path& dir, Split split) {
    const std::string prefix = split == Split::train ? "train" : "t10k";
    const auto img_path = find_idx(dir, prefix + "-images-idx3-ubyte");
    const auto lbl_path = find_idx(dir, prefix + "-labels-idx1-ubyte");
    const auto images = parse_idx(io::read_file_maybe_gzip(img_path));
    const auto labels = parse_idx(io::read_file_maybe_gzip(lbl_path));
    return normalize_pad(images, labels, img_path.string());
}

BatchStream::BatchStream(const ImageSet& set, std::size_t batch_size, std::uint64_t seed)
    : set_(&set), batch_(batch_size), seed_(seed) {
    if (batch_size == 0) throw ContractError("batch size must be at least 1");
    if (batch_size > set.size())
        throw ContractError("batch size " + std::to_string(batch_size) + " exceeds data size " +
                            std::to_string(set.size()));
}

const std::vector<std::size_t>& BatchStream::permutation(std::size_t epoch) const {
    if (epoch != cached_epoch_) {
        perm_.resize(set_->size());
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        std::mt19937_64 g(derive_seed(seed_, epoch));
        // Fisher-Yates with multiply-shift draws.
        for (std::size_t i = perm_.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(
                (static_cast<unsigned __int128>(g()) * i) >> 64);
            std::swap(perm_[i - 1], perm_[j]);
        }
        cached_epoch_ = epoch;
    }
    return perm_;
}

std::vector<std::size_t> BatchStream::indices(std::size_t epoch, std::size_t batch) const {
    if (batch >= batches_per_epoch()) throw ContractError("batch index past end of epoch");
    const auto& p = permutation(epoch);
    return {p.begin() + batch * batch_, p.begin() + (batch + 1) * batch_};
}

Tensor<float> BatchStream::batch(std::size_t epoch, std::size_t b) const {
    const auto idx = indices(epoch, b);
    return set_->gather(idx);
}

Tensor<float> BatchStream::at_iteration(std::size_t iteration) const {
    return batch(iteration / batches_per_epoch(), iteration % batches_per_epoch());
}

}  // namespace sdsep::mnist
