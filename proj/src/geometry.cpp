#include "mtdon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtdon {

namespace {

constexpr double kEps = 1e-12;

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point2 p, Point2 a, Point2 b) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  if (std::abs(cross(a, b, p)) > kEps * std::max(1.0, len)) return false;
  return p.x >= std::min(a.x, b.x) - kEps && p.x <= std::max(a.x, b.x) + kEps && p.y >= std::min(a.y, b.y) - kEps &&
         p.y <= std::max(a.y, b.y) + kEps;
}

bool segments_cross(Point2 a, Point2 b, Point2 c, Point2 d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  return on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b);
}

bool polygon_contains(const std::vector<Point2>& v, Point2 p) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i)
    if (on_segment(p, v[i], v[(i + 1) % n])) return true;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double xc = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

Shape2D Shape2D::polygon(std::vector<Point2> vertices) {
  const std::size_t n = vertices.size();
  if (n < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_cross(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]))
        throw std::invalid_argument("polygon edges " + std::to_string(i) + " and " + std::to_string(j) + " intersect");
    }
  Shape2D s;
  s.kind_ = Kind::Polygon;
  s.vertices_ = std::move(vertices);
  return s;
}

Shape2D Shape2D::circle(Point2 center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("circle radius must be > 0");
  Shape2D s;
  s.kind_ = Kind::Circle;
  s.center_ = center;
  s.radius_ = radius;
  return s;
}

Shape2D Shape2D::union_of(std::vector<Shape2D> parts) {
  Shape2D s;
  s.kind_ = Kind::Union;
  for (auto& p : parts) s.parts_.push_back(std::make_shared<const Shape2D>(std::move(p)));
  return s;
}

Shape2D Shape2D::difference(Shape2D base, Shape2D cutout) {
  Shape2D s;
  s.kind_ = Kind::Difference;
  s.parts_ = {std::make_shared<const Shape2D>(std::move(base)), std::make_shared<const Shape2D>(std::move(cutout))};
  return s;
}

Shape2D Shape2D::regular_polygon(std::size_t sides, Point2 center, double radius, double first_angle) {
  std::vector<Point2> v;
  for (std::size_t k = 0; k < sides; ++k) {
    const double th = first_angle + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(sides);
    v.push_back({center.x + radius * std::cos(th), center.y + radius * std::sin(th)});
  }
  return polygon(std::move(v));
}

bool Shape2D::contains(Point2 p) const {
  switch (kind_) {
    case Kind::Polygon:
      return polygon_contains(vertices_, p);
    case Kind::Circle: {
      const double dx = p.x - center_.x, dy = p.y - center_.y;
      return dx * dx + dy * dy <= radius_ * radius_ * (1.0 + kEps);
    }
    case Kind::Union:
      return std::any_of(parts_.begin(), parts_.end(), [&](const auto& s) { return s->contains(p); });
    case Kind::Difference:
      return parts_[0]->contains(p) && !parts_[1]->contains(p);
  }
  return false;
}

std::vector<std::string> catalog_names() { return {"S1", "S2", "S3", "S4", "S5", "S6", "S7", "T1", "T2", "T3"}; }

Shape2D catalog(const std::string& name) {
  const Point2 c{0.5, 0.5};
  const double r = 0.45;
  const double top = std::numbers::pi / 2.0;
  if (name == "S1") return Shape2D::polygon({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  if (name == "S2") return Shape2D::circle(c, r);
  if (name == "S3") return Shape2D::regular_polygon(3, c, r, top);
  if (name == "S4") return Shape2D::regular_polygon(5, c, r, top);
  if (name == "S5") return Shape2D::regular_polygon(6, c, r, top);
  if (name == "S6") return Shape2D::regular_polygon(7, c, r, top);
  if (name == "S7") return Shape2D::regular_polygon(8, c, r, top);
  if (name == "T1") {
    // Upper half-disk over a downward-pointing triangle sharing its diameter.
    auto lower = Shape2D::polygon({{-0.1, -0.1}, {1.1, -0.1}, {1.1, 0.5}, {-0.1, 0.5}});
    auto cap = Shape2D::difference(Shape2D::circle(c, r), lower);
    auto tri = Shape2D::polygon({{0.05, 0.5}, {0.5, 0.05}, {0.95, 0.5}});
    return Shape2D::union_of({cap, tri});
  }
  if (name == "T2") return Shape2D::difference(catalog("S1"), Shape2D::circle(c, 0.15));
  if (name == "T3")
    return Shape2D::polygon({{0.1, 0.1},
                             {0.9, 0.1},
                             {0.9, 0.3},
                             {0.6, 0.3},
                             {0.6, 0.7},
                             {0.9, 0.7},
                             {0.9, 0.9},
                             {0.1, 0.9},
                             {0.1, 0.7},
                             {0.4, 0.7},
                             {0.4, 0.3},
                             {0.1, 0.3}});
  throw std::invalid_argument("unknown geometry '" + name + "' (expected S1..S7 or T1..T3)");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double grid_coord(double lo, double hi, std::size_t count, std::size_t n) {
  if (count == 1) return lo;
  return lo + (hi - lo) * static_cast<double>(n) / static_cast<double>(count - 1);
}

BinaryMask rasterize_mask_2d(const Shape2D& shape, std::size_t h, std::size_t w, const BBox2& box) {
  if (h < 2 || w < 2) throw std::invalid_argument("rasterize_mask_2d: need at least 2x2 nodes");
  BinaryMask m{{h, w}, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t i = 0; i < h; ++i) {
    const double x = grid_coord(box.x0, box.x1, h, i);
    for (std::size_t j = 0; j < w; ++j)
      m.bits[i * w + j] = shape.contains({x, grid_coord(box.y0, box.y1, w, j)}) ? 1 : 0;
  }
  return m;
}

void validate(const PlateGeometry& p) {
  if (p.holes < 2 || p.holes > 9) throw std::invalid_argument("plate: hole count must lie in [2, 9]");
  if (!(p.distance >= 0.9 - 1e-9 && p.distance <= 1.6 + 1e-9))
    throw std::invalid_argument("plate: hole distance must lie in [0.9, 1.6]");
  if (!(p.hole_radius > 0.0) || !(p.protrusion_radius > 0.0))
    throw std::invalid_argument("plate: hole and protrusion radii must be > 0");
  const std::string tag = " (n=" + std::to_string(p.holes) + ", d=" + std::to_string(p.distance) +
                          ", r_h=" + std::to_string(p.hole_radius) + ")";
  if (p.distance + p.hole_radius >= PlateGeometry::outer_radius)
    throw std::invalid_argument("plate: holes cut the outer rim" + tag);
  const double chord = 2.0 * p.distance * std::sin(std::numbers::pi / p.holes);
  if (chord <= 2.0 * p.hole_radius) throw std::invalid_argument("plate: neighbouring holes overlap" + tag);
  if (p.distance - p.hole_radius <= p.protrusion_radius)
    throw std::invalid_argument("plate: holes reach over the protrusion (r_p=" + std::to_string(p.protrusion_radius) +
                                ")" + tag);
}

Point2 hole_center(const PlateGeometry& p, int k) {
  const double th = 2.0 * std::numbers::pi * k / p.holes;
  return {p.distance * std::cos(th), p.distance * std::sin(th)};
}

namespace {

bool in_hole_footprint(const PlateGeometry& p, double x, double y) {
  for (int k = 0; k < p.holes; ++k) {
    const Point2 c = hole_center(p, k);
    if (std::hypot(x - c.x, y - c.y) < p.hole_radius) return true;
  }
  return false;
}

}  // namespace

bool plate_contains(const PlateGeometry& p, Point3 q) {
  const double r = std::hypot(q.x, q.y);
  const bool base = q.z >= 0.0 && q.z <= PlateGeometry::thickness && r <= PlateGeometry::outer_radius;
  const bool boss = q.z >= -PlateGeometry::protrusion_height && q.z <= 0.0 && r <= p.protrusion_radius;
  if (!base && !boss) return false;
  if (boss) return true;
  return !in_hole_footprint(p, q.x, q.y);
}

BinaryMask rasterize_mask_3d(const PlateGeometry& plate, std::size_t nx, std::size_t ny, std::size_t nz,
                             const BBox3& box) {
  validate(plate);
  if (nx < 2 || ny < 2 || nz < 2) throw std::invalid_argument("rasterize_mask_3d: need at least 2 nodes per axis");
  BinaryMask m{{nx, ny, nz}, std::vector<std::uint8_t>(nx * ny * nz, 0)};
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t k = 0; k < nz; ++k) {
        const Point3 q{grid_coord(box.x0, box.x1, nx, i), grid_coord(box.y0, box.y1, ny, j),
                       grid_coord(box.z0, box.z1, nz, k)};
        m.bits[(i * ny + j) * nz + k] = plate_contains(plate, q) ? 1 : 0;
      }
  return m;
}

std::vector<PlateGeometry> plate_enumeration(double hole_radius, double protrusion_radius) {
  std::vector<PlateGeometry> out;
  for (int n = 2; n <= 9; ++n)
    for (int d10 = 9; d10 <= 16; ++d10) out.push_back({n, d10 / 10.0, hole_radius, protrusion_radius});
  return out;
}

std::vector<BoundaryFace> classify_boundary(const BinaryMask& mask, const PlateGeometry& plate, const BBox3& box) {
  if (mask.dims.size() != 3) throw std::invalid_argument("classify_boundary: expected a 3D mask");
  const std::size_t nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  const double h[3] = {(box.x1 - box.x0) / static_cast<double>(nx - 1), (box.y1 - box.y0) / static_cast<double>(ny - 1),
                       (box.z1 - box.z0) / static_cast<double>(nz - 1)};
  const double area[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};
  const std::size_t n[3] = {nx, ny, nz};

  std::vector<BoundaryFace> faces;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t k = 0; k < nz; ++k) {
        const std::size_t q = (i * ny + j) * nz + k;
        if (!mask.bits[q]) continue;
        const std::size_t idx[3] = {i, j, k};
        const double zp = grid_coord(box.z0, box.z1, nz, k);
        for (int dir = 0; dir < 6; ++dir) {
          const int axis = dir / 2;
          const int step = dir % 2 ? 1 : -1;
          const auto e = static_cast<std::int64_t>(idx[axis]) + step;
          const bool on_grid = e >= 0 && e < static_cast<std::int64_t>(n[axis]);
          std::size_t ni[3] = {i, j, k};
          if (on_grid) {
            ni[axis] = static_cast<std::size_t>(e);
            if (mask.bits[(ni[0] * ny + ni[1]) * nz + ni[2]]) continue;
          }
          // Exterior neighbour position (extrapolated when off the grid).
          double pe[3] = {grid_coord(box.x0, box.x1, nx, i), grid_coord(box.y0, box.y1, ny, j), zp};
          const double lo[3] = {box.x0, box.y0, box.z0};
          pe[axis] = lo[axis] + static_cast<double>(e) * h[axis];
          const double re = std::hypot(pe[0], pe[1]);
          const bool slab = pe[2] >= 0.0 && pe[2] <= PlateGeometry::thickness;
          FaceLabel label = FaceLabel::Adiabatic;
          if (slab && in_hole_footprint(plate, pe[0], pe[1]))
            label = FaceLabel::HeatedHoleWall;
          else if (slab && re > PlateGeometry::outer_radius)
            label = FaceLabel::Convective;
          else if (zp < 0.0 && pe[2] < 0.0)
            label = FaceLabel::Convective;
          faces.push_back({q, dir, label, area[axis]});
        }
      }
  return faces;
}

}  // namespace mtdon
