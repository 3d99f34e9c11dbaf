#pragma once

#include <vector>

#include "saip/tensor.hpp"

namespace saip::datalab {

struct TileOrigin {
  Index row = 0;
  Index col = 0;
};

/// Tile placement over an H x W raster. Tiles step by tile - overlap and the
/// last row/column of tiles is shifted to end at the border. A raster smaller
/// than one tile gets a single zero-padded tile.
struct TileLayout {
  Index height = 0;
  Index width = 0;
  Index tile = 0;
  Index overlap = 0;
  std::vector<TileOrigin> origins;
};

TileLayout plan_tiles(Index height, Index width, Index tile, Index overlap);

/// Cuts a (C, H, W) raster into (C, tile, tile) tiles.
std::vector<Tensor> tile_image(const Tensor& image, const TileLayout& layout);

/// Averages overlapping tiles back into a (C, H, W) raster; padding is dropped.
Tensor stitch(const std::vector<Tensor>& tiles, const TileLayout& layout);

}  // namespace saip::datalab
