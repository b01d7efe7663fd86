#include "vpr/vlad.hpp"

#include <cmath>
#include <limits>
#include <string_view>

#include "binary_io.hpp"
#include "vpr/error.hpp"

namespace vpr {
namespace {

constexpr std::string_view kVladMagic = "VPRE";
constexpr std::uint8_t kVladVersion = 1;

}  // namespace

VladVector encode(const Vocabulary& vocab, const DenseFeatureMap& map) {
    return encode(vocab, map, assign_hard(vocab, map));
}

VladVector encode(const Vocabulary& vocab, const DenseFeatureMap& map, const ClusterAssignmentGrid& grid) {
    if (map.dim != vocab.dim)
        throw ShapeError("encode: map dim " + std::to_string(map.dim) + " != vocabulary dim " +
                         std::to_string(vocab.dim));
    if (grid.labels.size() != map.cell_count()) throw ShapeError("encode: assignment grid does not match map");

    const std::size_t kd = std::size_t{vocab.k} * vocab.dim;
    std::vector<double> sums(kd, 0.0);
    VladVector out;
    out.image_id = map.image_id;
    out.k = vocab.k;
    out.dim = vocab.dim;
    out.occupancy.assign(vocab.k, 0);

    for (std::size_t i = 0; i < map.cell_count(); ++i) {
        const std::uint32_t c = grid.labels[i];
        auto cell = map.cell(i);
        auto centroid = vocab.centroid(c);
        double* row = sums.data() + std::size_t{c} * vocab.dim;
        for (std::uint32_t j = 0; j < vocab.dim; ++j)
            row[j] += static_cast<double>(cell[j]) - static_cast<double>(centroid[j]);
        ++out.occupancy[c];
    }

    out.residuals.resize(kd);
    for (std::size_t j = 0; j < kd; ++j) out.residuals[j] = static_cast<float>(sums[j]);

    // Intra-normalize each cluster row, then L2-normalize the concatenation.
    std::vector<double> desc(kd, 0.0);
    for (std::uint32_t c = 0; c < vocab.k; ++c) {
        const double* row = sums.data() + std::size_t{c} * vocab.dim;
        double norm = 0.0;
        for (std::uint32_t j = 0; j < vocab.dim; ++j) norm += row[j] * row[j];
        norm = std::max(std::sqrt(norm), kNormEpsilon);
        for (std::uint32_t j = 0; j < vocab.dim; ++j) desc[std::size_t{c} * vocab.dim + j] = row[j] / norm;
    }
    double total = 0.0;
    for (double v : desc) total += v * v;
    total = std::sqrt(total);
    out.global_desc.assign(kd, 0.0f);
    if (total > 0.0)
        for (std::size_t j = 0; j < kd; ++j) out.global_desc[j] = static_cast<float>(desc[j] / total);
    return out;
}

AssignmentMask upscale_mask(const ClusterAssignmentGrid& grid, std::uint32_t image_h, std::uint32_t image_w,
                            std::string image_id) {
    if (grid.grid_h == 0 || grid.grid_w == 0 || grid.labels.size() != std::size_t{grid.grid_h} * grid.grid_w)
        throw ShapeError("upscale_mask: empty or malformed grid");
    if (image_h == 0 || image_w == 0) throw ShapeError("upscale_mask: image dims must be positive");
    AssignmentMask mask{std::move(image_id), image_h, image_w, {}};
    mask.labels.resize(std::size_t{image_h} * image_w);
    for (std::uint32_t r = 0; r < image_h; ++r)
        for (std::uint32_t c = 0; c < image_w; ++c) {
            const std::uint32_t label =
                grid.labels[grid_cell_for_pixel(r, c, grid.grid_h, grid.grid_w, image_h, image_w)];
            if (label > std::numeric_limits<std::uint16_t>::max())
                throw ShapeError("upscale_mask: label exceeds 16-bit range");
            mask.labels[std::size_t{r} * image_w + c] = static_cast<std::uint16_t>(label);
        }
    return mask;
}

std::vector<std::uint8_t> encode_vlad_file(const VladVector& vlad) {
    const std::size_t kd = std::size_t{vlad.k} * vlad.dim;
    if (vlad.residuals.size() != kd || vlad.global_desc.size() != kd || vlad.occupancy.size() != vlad.k)
        throw ShapeError("VLAD '" + vlad.image_id + "': array sizes do not match k x dim");
    detail::ByteWriter w;
    w.magic(kVladMagic);
    w.u8(kVladVersion);
    w.u32(vlad.k);
    w.u32(vlad.dim);
    w.f32s(vlad.residuals);
    for (auto o : vlad.occupancy) w.u32(o);
    w.f32s(vlad.global_desc);
    return w.take();
}

VladVector decode_vlad_file(std::span<const std::uint8_t> bytes, std::string image_id) {
    detail::ByteReader r(bytes, "VLAD file");
    r.expect_magic(kVladMagic);
    r.expect_version(kVladVersion);
    VladVector v;
    v.image_id = std::move(image_id);
    v.k = r.u32();
    v.dim = r.u32();
    const std::uint64_t kd = std::uint64_t{v.k} * v.dim;
    r.need_elements(2 * kd + v.k, sizeof(float));
    v.residuals.resize(kd);
    r.f32s(v.residuals);
    v.occupancy.resize(v.k);
    for (auto& o : v.occupancy) o = r.u32();
    v.global_desc.resize(kd);
    r.f32s(v.global_desc);
    r.expect_end();
    return v;
}

void write_vlad(const VladVector& vlad, const std::filesystem::path& path) {
    write_file_bytes(path, encode_vlad_file(vlad));
}

VladVector read_vlad(const std::filesystem::path& path, std::string image_id) {
    auto bytes = read_file_bytes(path);
    if (image_id.empty()) image_id = path.stem().string();
    try {
        return decode_vlad_file(bytes, std::move(image_id));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace vpr
