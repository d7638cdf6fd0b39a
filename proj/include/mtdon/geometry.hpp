#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mtdon {

struct Point2 {
  double x = 0.0, y = 0.0;
};

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Closed planar region: polygon, disk, or set algebra over those.
class Shape2D {
 public:
  enum class Kind { Polygon, Circle, Union, Difference };

  /// Vertices counter-clockwise; throws if fewer than 3 or self-intersecting.
  static Shape2D polygon(std::vector<Point2> vertices);
  static Shape2D circle(Point2 center, double radius);
  static Shape2D union_of(std::vector<Shape2D> parts);
  static Shape2D difference(Shape2D base, Shape2D cutout);
  static Shape2D regular_polygon(std::size_t sides, Point2 center, double radius, double first_angle);

  Kind kind() const { return kind_; }
  const std::vector<Point2>& vertices() const { return vertices_; }

  /// Boundary counts as inside. Difference keeps its base boundary but drops
  /// the closed cutout.
  bool contains(Point2 p) const;

 private:
  Kind kind_ = Kind::Union;
  std::vector<Point2> vertices_;
  Point2 center_{};
  double radius_ = 0.0;
  std::vector<std::shared_ptr<const Shape2D>> parts_;
};

/// S1..S7, T1..T3.
Shape2D catalog(const std::string& name);
std::vector<std::string> catalog_names();

struct BBox2 {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
};

struct BBox3 {
  double x0 = -2.0, x1 = 2.0, y0 = -2.0, y1 = 2.0, z0 = -0.25, z1 = 1.0;
};

/// 0/1 occupancy. 2D: dims {H, W}, index i*W + j is node (x_i, y_j).
/// 3D: dims {X, Y, Z}, index (i*Y + j)*Z + k.
struct BinaryMask {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Node coordinate n of a count-point linspace over [lo, hi].
double grid_coord(double lo, double hi, std::size_t count, std::size_t n);

BinaryMask rasterize_mask_2d(const Shape2D& shape, std::size_t h, std::size_t w, const BBox2& box = {});

/// Base slab z in [0, 1] of radius 2, protrusion cylinder z in [-1/4, 0]
/// of radius r_p, n through-holes of radius r_h at radius d, hole k at
/// angle 2*pi*k/n.
struct PlateGeometry {
  static constexpr double outer_radius = 2.0;
  static constexpr double thickness = 1.0;
  static constexpr double protrusion_height = 0.25;

  int holes = 2;
  double distance = 0.9;
  double hole_radius = 0.2;
  double protrusion_radius = 0.6;
};

/// Throws std::invalid_argument for out-of-range parameters and for holes
/// that cut the rim, touch each other, or reach over the protrusion.
void validate(const PlateGeometry& plate);

Point2 hole_center(const PlateGeometry& plate, int k);
bool plate_contains(const PlateGeometry& plate, Point3 p);
BinaryMask rasterize_mask_3d(const PlateGeometry& plate, std::size_t nx, std::size_t ny, std::size_t nz,
                             const BBox3& box = {});

/// The 64 (n, d) configurations, n = 2..9 outer, d = 0.9..1.6 inner.
std::vector<PlateGeometry> plate_enumeration(double hole_radius = 0.2, double protrusion_radius = 0.6);

enum class FaceLabel : std::uint8_t { Adiabatic = 0, Convective = 1, HeatedHoleWall = 2 };

/// Face between interior node `node` and its exterior (or off-grid)
/// neighbor in direction `dir` (0..5: -x, +x, -y, +y, -z, +z).
struct BoundaryFace {
  std::size_t node;
  int dir;
  FaceLabel label;
  double area;
};

std::vector<BoundaryFace> classify_boundary(const BinaryMask& mask, const PlateGeometry& plate, const BBox3& box = {});

}  // namespace mtdon
