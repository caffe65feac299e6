#pragma once
// CAMW parameter checkpoints.
//
//   "CAMW" | u32 version (=1)
//   config: u32 layers, heads, dim, patch_dim, patches | u8 use_ffn | u32 ffn_mult
//           | f64 mask_ratio | f64 ln_eps
//   u32 tensor count, then per tensor:
//           u16 name length | name | u32 rows | u32 cols | rows*cols f32 (row-major)
//
// Loading requires the tensor list (names, order, shapes) to match the one
// implied by the stored config, and optionally the config to match an
// expected one.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "encoder.hpp"

namespace cam {

inline constexpr std::uint32_t kCamwVersion = 1;

template <typename Scalar>
io::ByteWriter encode_checkpoint(const EncoderParams<Scalar>& params) {
    const auto& c = params.config;
    io::ByteWriter w;
    w.bytes("CAMW");
    w.u32(kCamwVersion);
    w.u32(static_cast<std::uint32_t>(c.layers));
    w.u32(static_cast<std::uint32_t>(c.heads));
    w.u32(static_cast<std::uint32_t>(c.dim));
    w.u32(static_cast<std::uint32_t>(c.patch_dim));
    w.u32(static_cast<std::uint32_t>(c.patches));
    w.u8(c.use_ffn ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(c.ffn_mult));
    w.f64(c.mask_ratio);
    w.f64(c.ln_eps);
    std::uint32_t count = 0;
    params.for_each([&](const std::string&, const Mat<Scalar>&, bool) { ++count; });
    w.u32(count);
    params.for_each([&](const std::string& name, const Mat<Scalar>& t, bool) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t.rows()));
        w.u32(static_cast<std::uint32_t>(t.cols()));
        for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.data()[i]));
    });
    return w;
}

template <typename Scalar>
void save_checkpoint(const EncoderParams<Scalar>& params, const std::filesystem::path& path) {
    encode_checkpoint(params).save(path);
}

template <typename Scalar = float>
EncoderParams<Scalar> load_checkpoint(const std::filesystem::path& path,
                                      const std::optional<EncoderConfig>& expected = std::nullopt) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("CAMW");
    if (const auto v = r.u32("version"); v != kCamwVersion)
        throw FormatError(r.source() + ": unsupported checkpoint version " + std::to_string(v));
    EncoderConfig c;
    c.layers = r.u32("layers");
    c.heads = r.u32("heads");
    c.dim = r.u32("dim");
    c.patch_dim = r.u32("patch_dim");
    c.patches = r.u32("patches");
    c.use_ffn = r.u8("use_ffn") != 0;
    c.ffn_mult = r.u32("ffn_mult");
    c.mask_ratio = r.f64("mask_ratio");
    c.ln_eps = r.f64("ln_eps");
    try {
        c.validate(true);
    } catch (const ConfigError& e) {
        throw FormatError(r.source() + ": invalid stored config: " + e.what());
    }
    if (expected && !(*expected == c))
        throw ConfigError(r.source() + ": checkpoint config does not match the requested encoder config");
    auto params = EncoderParams<Scalar>::zeros(c);
    std::uint32_t expected_count = 0;
    params.for_each([&](const std::string&, const Mat<Scalar>&, bool) { ++expected_count; });
    if (r.u32("tensor count") != expected_count) throw FormatError(r.source() + ": tensor count mismatch");
    params.for_each([&](const std::string& name, Mat<Scalar>& t, bool) {
        const auto len = r.u16("tensor name length");
        const auto got = r.bytes(len, "tensor name");
        if (got != name) throw FormatError(r.source() + ": expected tensor " + name + ", found " + got);
        const auto rows = r.u32("tensor rows");
        const auto cols = r.u32("tensor cols");
        if (rows != t.rows() || cols != t.cols())
            throw FormatError(r.source() + ": shape mismatch for " + name + ": stored " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                              std::to_string(t.cols()));
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(r.f32("tensor data"));
    });
    r.expect_end();
    if (!params.all_finite()) throw FormatError(r.source() + ": non-finite parameter values");
    return params;
}

}  // namespace cam
