#include <gtest/gtest.h>

#include <filesystem>
#include <cstring>
#include <set>
#include <unistd.h>

#include "sdsep/checkpoint.hpp"
#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"
#include "sdsep/mnist.hpp"
#include "sdsep/rng.hpp"

using namespace sdsep;
namespace fs = std::filesystem;

namespace {

mnist::IdxArray images_idx(std::size_t n, std::uint8_t fill = 0) {
    return {0x08, {n, 28, 28}, std::vector<std::uint8_t>(n * 784, fill)};
}

mnist::IdxArray labels_idx(std::vector<std::uint8_t> labels) {
    return {0x08, {labels.size()}, std::move(labels)};
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sdsep_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Idx, TwoImages) {
    const auto bytes = mnist::encode_idx(images_idx(2, 7));
    EXPECT_EQ(bytes[2], 0x08);
    EXPECT_EQ(bytes[3], 0x03);
    const auto a = mnist::parse_idx(bytes);
    EXPECT_EQ(a.dims, (std::vector<std::size_t>{2, 28, 28}));
    EXPECT_EQ(a.data.size(), 2u * 784);
}

TEST(Idx, Labels) {
    const std::vector<std::uint8_t> bytes{0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 9};
    EXPECT_EQ(mnist::parse_idx(bytes).data, (std::vector<std::uint8_t>{5, 0, 9}));
}

TEST(Idx, TruncatedPayloadReportsOffset) {
    auto bytes = mnist::encode_idx(images_idx(2));
    bytes.pop_back();
    try {
        mnist::parse_idx(bytes);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 16u + 2 * 784 - 1);
    }
}

TEST(Idx, BadMagicAndOverflow) {
    std::vector<std::uint8_t> bad{1, 0, 8, 1, 0, 0, 0, 0};
    EXPECT_THROW(mnist::parse_idx(bad), ParseError);
    std::vector<std::uint8_t> huge{0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
                                   0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
    try {
        mnist::parse_idx(huge);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 12u);
    }
}

TEST(Normalize, EndpointsMidpointAndRoundTrip) {
    EXPECT_EQ(mnist::normalize(0), -1.0f);
    EXPECT_EQ(mnist::normalize(255), 1.0f);
    EXPECT_FLOAT_EQ(127.5f / 255.0f * 2.0f - 1.0f, 0.0f);
    for (int p = 0; p < 256; ++p)
        EXPECT_EQ(mnist::denormalize(mnist::normalize(static_cast<std::uint8_t>(p))), p);
}

TEST(Normalize, ZeroImagePadsToAllMinusOne) {
    const auto set = mnist::normalize_pad(images_idx(1), labels_idx({3}), "t");
    ASSERT_EQ(set.image(0).size(), 1024u);
    for (float v : set.image(0)) EXPECT_EQ(v, -1.0f);
}

TEST(Normalize, PaddingBorderAndPlacement) {
    auto img = images_idx(1, 255);
    const auto set = mnist::normalize_pad(img, labels_idx({1}), "t");
    const auto im = set.image(0);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) {
            const bool inside = r >= 2 && r < 30 && c >= 2 && c < 30;
            EXPECT_EQ(im[r * 32 + c], inside ? 1.0f : -1.0f);
        }
    EXPECT_THROW(mnist::normalize_pad(img, labels_idx({1, 2}), "t"), ShapeError);
    EXPECT_THROW(mnist::normalize_pad(img, labels_idx({12}), "t"), ParseError);
}

TEST(Batches, CountDeterminismAndSeeds) {
    const auto set = mnist::normalize_pad(images_idx(10), labels_idx(std::vector<std::uint8_t>(10, 0)), "t");
    mnist::BatchStream s(set, 3, 1);
    EXPECT_EQ(s.batches_per_epoch(), 3u);
    mnist::BatchStream s2(set, 3, 1);
    for (std::size_t e = 0; e < 3; ++e)
        for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(s.indices(e, b), s2.indices(e, b));
    EXPECT_THROW(mnist::BatchStream(set, 11, 1), ContractError);
    EXPECT_THROW(mnist::BatchStream(set, 0, 1), ContractError);
}

TEST(Batches, DifferentSeedsGiveDifferentFirstBatches) {
    std::vector<std::uint8_t> labels(1000, 0);
    const auto set = mnist::normalize_pad(images_idx(1000), labels_idx(labels), "t");
    const auto ref = mnist::BatchStream(set, 16, 0).indices(0, 0);
    const std::set<std::size_t> ref_set(ref.begin(), ref.end());
    int differ = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto idx = mnist::BatchStream(set, 16, seed).indices(0, 0);
        if (std::set<std::size_t>(idx.begin(), idx.end()) != ref_set) ++differ;
    }
    EXPECT_GE(differ, 99);
}

TEST(Batches, EpochIsAPermutation) {
    std::vector<std::uint8_t> labels(50, 0);
    const auto set = mnist::normalize_pad(images_idx(50), labels_idx(labels), "t");
    mnist::BatchStream s(set, 5, 9);
    std::set<std::size_t> seen;
    for (std::size_t b = 0; b < 10; ++b)
        for (auto i : s.indices(2, b)) seen.insert(i);
    EXPECT_EQ(seen.size(), 50u);
}

TEST(Load, GzipAndRawFilesAgree) {
    const auto dir = temp_dir("load");
    Rng rng(3);
    auto img = images_idx(4);
    for (auto& p : img.data) p = static_cast<std::uint8_t>(rng.next_u64());
    io::write_file_atomic(dir / "t10k-images-idx3-ubyte", mnist::encode_idx(img));
    io::write_file_atomic(dir / "t10k-labels-idx1-ubyte", mnist::encode_idx(labels_idx({1, 2, 3, 4})));
    const auto raw = mnist::load(dir, mnist::Split::test);
    const std::string cmd = "gzip -f " + (dir / "t10k-images-idx3-ubyte").string();
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    const auto gz = mnist::load(dir, mnist::Split::test);
    EXPECT_EQ(std::vector<float>(raw.pixels().begin(), raw.pixels().end()),
              std::vector<float>(gz.pixels().begin(), gz.pixels().end()));
    EXPECT_EQ(gz.labels(), (std::vector<std::uint8_t>{1, 2, 3, 4}));
    EXPECT_THROW(mnist::load(dir, mnist::Split::train), IoError);
    fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(4);
    std::vector<float> a(37);
    std::vector<double> b(5);
    rng.fill_normal<float>(a);
    rng.fill_normal<double>(b);
    a[3] = -0.0f;
    Checkpoint ck;
    ck.put("a", Tensor<float>::from({37}, a));
    ck.put("b", Shape{5}, b);
    ck.meta()["iteration"] = 12;
    ck.meta()["rng"] = rng.state();
    const auto bytes = ck.serialize();
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "SDCKPT1");
    EXPECT_EQ(bytes[7], 0);
    const auto back = Checkpoint::deserialize(bytes);
    EXPECT_EQ(back.values<float>("a"), a);
    EXPECT_EQ(std::memcmp(back.values<float>("a").data(), a.data(), a.size() * 4), 0);
    EXPECT_EQ(back.values<double>("b"), b);
    EXPECT_EQ(back.meta()["iteration"], 12);
    EXPECT_EQ(back.serialize(), bytes);
    Rng restored;
    restored.restore(back.meta()["rng"]);
    EXPECT_EQ(restored.next_u64(), rng.next_u64());
    auto dst = Tensor<float>::zeros({36});
    EXPECT_THROW(back.load_into("a", dst), ShapeError);
}

TEST(Checkpoint, CorruptFilesAreParseErrors) {
    Checkpoint ck;
    ck.put("x", Shape{2}, std::vector<float>{1, 2});
    auto bytes = ck.serialize();
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(Checkpoint::deserialize(truncated), ParseError);
    bytes[0] = 'X';
    EXPECT_THROW(Checkpoint::deserialize(bytes), ParseError);
    EXPECT_THROW(Checkpoint::load("/nonexistent/ck.bin"), IoError);
}
