#include "saip/datalab/tiling.hpp"

#include <stdexcept>
#include <string>

namespace saip::datalab {
namespace {

std::vector<Index> axis_starts(Index extent, Index tile, Index step) {
  if (extent <= tile) return {0};
  std::vector<Index> starts;
  for (Index s = 0;; s += step) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

}  // namespace

TileLayout plan_tiles(Index height, Index width, Index tile, Index overlap) {
  if (tile <= 0 || tile % 32 != 0) throw std::invalid_argument("tile size " + std::to_string(tile) + " must be a positive multiple of 32");
  if (overlap < 0 || overlap >= tile) throw std::invalid_argument("overlap must lie in [0, tile)");
  if (height <= 0 || width <= 0) throw std::invalid_argument("raster must be non-empty");
  TileLayout layout{height, width, tile, overlap, {}};
  for (Index r : axis_starts(height, tile, tile - overlap))
    for (Index c : axis_starts(width, tile, tile - overlap)) layout.origins.push_back({r, c});
  return layout;
}

std::vector<Tensor> tile_image(const Tensor& image, const TileLayout& layout) {
  if (image.rank() != 3 || image.dim(1) != layout.height || image.dim(2) != layout.width) {
    throw ShapeError("image " + shape_to_string(image.shape()) + " does not match the tile layout");
  }
  const Index channels = image.dim(0), t = layout.tile;
  std::vector<Tensor> tiles;
  for (const auto& o : layout.origins) {
    Tensor tile(Shape{channels, t, t});
    for (Index c = 0; c < channels; ++c)
      for (Index i = 0; i < t && o.row + i < layout.height; ++i)
        for (Index j = 0; j < t && o.col + j < layout.width; ++j)
          tile[(c * t + i) * t + j] = image[(c * layout.height + o.row + i) * layout.width + o.col + j];
    tiles.push_back(std::move(tile));
  }
  return tiles;
}

Tensor stitch(const std::vector<Tensor>& tiles, const TileLayout& layout) {
  if (tiles.size() != layout.origins.size()) throw std::invalid_argument("tile count does not match the layout");
  const Index channels = tiles.front().dim(0), t = layout.tile;
  std::vector<double> sum(static_cast<std::size_t>(channels * layout.height * layout.width), 0.0);
  std::vector<int> hits(static_cast<std::size_t>(layout.height * layout.width), 0);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const auto& o = layout.origins[k];
    if (tiles[k].shape() != Shape{channels, t, t}) throw ShapeError("tile " + std::to_string(k) + " has the wrong shape");
    for (Index i = 0; i < t && o.row + i < layout.height; ++i)
      for (Index j = 0; j < t && o.col + j < layout.width; ++j) {
        const Index p = (o.row + i) * layout.width + o.col + j;
        ++hits[static_cast<std::size_t>(p)];
        for (Index c = 0; c < channels; ++c)
          sum[static_cast<std::size_t>(c * layout.height * layout.width + p)] += tiles[k][(c * t + i) * t + j];
      }
  }
  Tensor out(Shape{channels, layout.height, layout.width});
  const Index plane = layout.height * layout.width;
  for (Index c = 0; c < channels; ++c)
    for (Index p = 0; p < plane; ++p)
      out[c * plane + p] = static_cast<float>(sum[static_cast<std::size_t>(c * plane + p)] / hits[static_cast<std::size_t>(p)]);
  return out;
}

}  // namespace saip::datalab
