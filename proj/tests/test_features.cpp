#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "twinspect/features.hpp"

using namespace twinspect;

namespace {

ImageF random_image(int w, int h, uint64_t seed) {
    ImageF img(w, h);
    Rng rng(seed);
    for (auto& v : img.data) v = float(rng.uniform());
    return img;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("extract_tokens: 504x504 with patch 14 gives a 36x36 grid") {
    const ImageF img = random_image(504, 504, 21);
    const auto tokens = feat::extract_tokens(img, 14);
    CHECK(tokens.grid_h == 36);
    CHECK(tokens.grid_w == 36);
    CHECK(tokens.count() == 1296);
    CHECK(tokens.dim == feat::kBuiltinTokenDim);
    for (int r = 0; r < tokens.count(); ++r)
        for (int c = 0; c < tokens.dim; ++c) CHECK(std::isfinite(tokens.data(r, c)));
}

TEST_CASE("extract_tokens: constant image collapses the descriptor") {
    ImageF img(56, 56, 0.37f);
    const auto tokens = feat::extract_tokens(img, 14);
    for (int r = 0; r < tokens.count(); ++r) {
        CHECK(tokens.data(r, 0) == doctest::Approx(0.37).epsilon(1e-6));  // mean
        CHECK(std::abs(tokens.data(r, 1)) < 1e-7);    // std
        for (int b = 2; b < 6; ++b) CHECK(tokens.data(r, b) == 0.0f);     // gradient bins
        CHECK(std::abs(tokens.data(r, 6)) < 1e-6);    // laplacian bands
        CHECK(std::abs(tokens.data(r, 7)) < 1e-6);
        CHECK(tokens.data(r, 8) == 0.37f);
        CHECK(tokens.data(r, 9) == 0.37f);
    }
}

TEST_CASE("extract_tokens: global intensity shift moves only mean/min/max") {
    const ImageF img = random_image(70, 70, 22);
    ImageF shifted = img;
    const float b = 0.11f;
    for (auto& v : shifted.data) v += b;
    const auto t0 = feat::extract_tokens(img, 14);
    const auto t1 = feat::extract_tokens(shifted, 14);
    for (int r = 0; r < t0.count(); ++r) {
        CHECK(t1.data(r, 0) - t0.data(r, 0) == doctest::Approx(b).epsilon(1e-5));
        CHECK(std::abs(t1.data(r, 1) - t0.data(r, 1)) < 1e-6);
        for (int bin = 2; bin < 6; ++bin) CHECK(std::abs(t1.data(r, bin) - t0.data(r, bin)) < 1e-6);
        CHECK(std::abs(t1.data(r, 6) - t0.data(r, 6)) < 1e-5);
        CHECK(std::abs(t1.data(r, 7) - t0.data(r, 7)) < 1e-5);
    }
}

TEST_CASE("extract_tokens: translation covariance at patch granularity") {
    const int patch = 14;
    const ImageF img = random_image(140, 140, 23);
    ImageF moved(140, 140, 0.0f);
    for (int y = 0; y < 140; ++y)
        for (int x = patch; x < 140; ++x) moved.at(x, y) = img.at(x - patch, y);
    const auto t0 = feat::extract_tokens(img, patch);
    const auto t1 = feat::extract_tokens(moved, patch);
    // Skip the first two and last columns: clamped image borders and the
    // shift seam make those patches legitimately different.
    for (int gy = 0; gy < t0.grid_h; ++gy)
        for (int gx = 2; gx + 1 < t0.grid_w; ++gx)
            for (int c = 0; c < t0.dim; ++c) {
                const float a = t0.data(gy * t0.grid_w + (gx - 1), c);
                const float b = t1.data(gy * t1.grid_w + gx, c);
                CHECK(std::abs(a - b) < 1e-6f);
            }
}

TEST_CASE("extract_tokens rejects non-divisible dimensions") {
    CHECK_THROWS_AS(feat::extract_tokens(ImageF(100, 100), 14), feat::DimensionMismatch);
}

TEST_CASE("patch_mask thresholds the foreground fraction") {
    Mask ones(28, 28, 1);
    auto pm = feat::patch_mask(ones, 14);
    CHECK(pm.count_on() == 4);
    Mask zeros(28, 28, 0);
    CHECK(feat::patch_mask(zeros, 14).count_on() == 0);

    // Exactly half-covered patch: bit set at threshold 0.5, clear at 0.51.
    Mask half(2, 2, 0);
    half.at(0, 0) = 1;
    half.at(1, 0) = 1;
    CHECK(feat::patch_mask(half, 2, 0.5).bits[0] == 1);
    CHECK(feat::patch_mask(half, 2, 0.51).bits[0] == 0);
}

TEST_CASE("token files round-trip bit-exactly") {
    feat::PatchTokens tokens;
    tokens.grid_h = 6;
    tokens.grid_w = 5;
    tokens.dim = 7;
    tokens.data.resize(30, 7);
    Rng rng(24);
    for (int r = 0; r < 30; ++r)
        for (int c = 0; c < 7; ++c) tokens.data(r, c) = float(rng.uniform(-3, 3));
    const auto path = temp_file("ts_tokens_roundtrip.ttok");
    feat::save_tokens(path.string(), tokens);
    const auto loaded = feat::load_tokens(path.string());
    CHECK(loaded.grid_h == 6);
    CHECK(loaded.grid_w == 5);
    CHECK(loaded.dim == 7);
    for (int r = 0; r < 30; ++r)
        for (int c = 0; c < 7; ++c) CHECK(loaded.data(r, c) == tokens.data(r, c));
}

TEST_CASE("token file errors carry byte offsets") {
    feat::PatchTokens tokens;
    tokens.grid_h = tokens.grid_w = 2;
    tokens.dim = 3;
    tokens.data = Eigen::MatrixXf::Ones(4, 3);
    const auto path = temp_file("ts_tokens_trunc.ttok");
    feat::save_tokens(path.string(), tokens);

    // Truncate into the payload: offset should be reported inside it.
    {
        std::ifstream is(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)), {});
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), 30);
    }
    try {
        feat::load_tokens(path.string());
        FAIL("expected FormatError");
    } catch (const feat::FormatError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }

    // Flip a payload byte: checksum mismatch.
    feat::save_tokens(path.string(), tokens);
    {
        std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
        io.seekp(24);
        char byte = 0x5a;
        io.write(&byte, 1);
    }
    CHECK_THROWS_AS(feat::load_tokens(path.string()), feat::ChecksumMismatch);

    // Bad magic reports offset 0.
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "NOPE";
    }
    CHECK_THROWS_AS(feat::load_tokens(path.string()), feat::FormatError);
}

TEST_CASE("token files written by an independent producer are ingested") {
    // Byte-level writer sharing no code with save_tokens: 36x36x384 tensor.
    const int gh = 36, gw = 36, dim = 384;
    const auto path = temp_file("ts_tokens_external.ttok");
    std::vector<float> payload(size_t(gh) * gw * dim);
    Rng rng(25);
    for (auto& v : payload) v = float(rng.uniform(-1, 1));
    {
        std::ofstream os(path, std::ios::binary);
        os.write("TTOK", 4);
        auto put32 = [&](uint32_t v) {
            for (int i = 0; i < 4; ++i) os.put(char((v >> (8 * i)) & 0xff));
        };
        put32(1);
        put32(uint32_t(gh));
        put32(uint32_t(gw));
        put32(uint32_t(dim));
        uint64_t h = 14695981039346656037ULL;
        for (float f : payload) {
            uint32_t u;
            std::memcpy(&u, &f, 4);
            for (int i = 0; i < 4; ++i) {
                const unsigned char byte = (u >> (8 * i)) & 0xff;
                os.put(char(byte));
                h = (h ^ byte) * 1099511628211ULL;
            }
        }
        for (int i = 0; i < 8; ++i) os.put(char((h >> (8 * i)) & 0xff));
    }
    const auto loaded = feat::load_tokens(path.string());
    CHECK(loaded.grid_h == gh);
    CHECK(loaded.grid_w == gw);
    CHECK(loaded.dim == dim);
    CHECK(loaded.data(5, 17) == payload[size_t(5) * dim + 17]);
    CHECK(loaded.data(1295, 383) == payload[size_t(1295) * dim + 383]);
}
