#include "binary_io.hpp"
#include "nvhcf/model.hpp"

namespace nvhcf::model {

namespace {

constexpr std::string_view kMagic{"NVHCFCK\0", 8};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  detail::BinaryWriter w(path);
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {params.dims.users, params.dims.items, params.dims.user_features, params.dims.item_features,
                        params.dims.latent, params.widths.prior_hidden, params.widths.inference_hidden1,
                        params.widths.inference_hidden2, params.widths.decoder_hidden1, params.widths.decoder_hidden2})
    w.u64(v);
  w.pod<std::uint8_t>(params.variant.use_user_prior ? 1 : 0);
  w.pod<std::uint8_t>(params.variant.use_item_prior ? 1 : 0);
  w.u64(params.seed);
  w.u64(params.step);
  for (const LayerParams* layer : params.layers()) {
    w.matrix(layer->weight);
    w.vec(layer->bias);
  }
  w.finish();
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  r.expect(kMagic);
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw IoError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  Dims dims;
  Widths widths;
  for (std::size_t* v : {&dims.users, &dims.items, &dims.user_features, &dims.item_features, &dims.latent,
                         &widths.prior_hidden, &widths.inference_hidden1, &widths.inference_hidden2,
                         &widths.decoder_hidden1, &widths.decoder_hidden2})
    *v = r.u64();
  Variant variant;
  variant.use_user_prior = r.pod<std::uint8_t>() != 0;
  variant.use_item_prior = r.pod<std::uint8_t>() != 0;
  const auto seed = r.u64();
  const auto step = r.u64();

  ModelParams params;
  try {
    params = init_model(dims, widths, variant, seed);
  } catch (const std::exception& e) {
    throw IoError(path.string() + ": corrupt checkpoint header (" + e.what() + ")");
  }
  params.step = step;
  for (LayerParams* layer : params.layers()) {
    Matrix w = r.matrix();
    Vector b = r.vec();
    if (w.rows() != layer->weight.rows() || w.cols() != layer->weight.cols() || b.size() != layer->bias.size())
      throw IoError(path.string() + ": layer shape does not match checkpoint header");
    layer->weight = std::move(w);
    layer->bias = std::move(b);
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after checkpoint");
  return params;
}

}  // namespace nvhcf::model
