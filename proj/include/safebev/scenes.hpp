#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "safebev/geometry.hpp"
#include "safebev/loss.hpp"
#include "safebev/safety_spec.hpp"
#include "safebev/tensor.hpp"
#include "safebev/training.hpp"

namespace safebev {

struct Scene {
    std::uint64_t id = 0;
    std::uint64_t seed = 0;
    std::vector<OrientedBox> vehicles;

    friend bool operator==(const Scene&, const Scene&) = default;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EncodingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct VehicleSizeRange {
    double min_width = 1.5;
    double max_width = 2.5;
    double min_length = 3.0;
    double max_length = 6.0;
};

inline constexpr std::size_t kMaxPlacementAttempts = 10000;

/// Scenes with ids 0..count-1. Each holds 1-4 pairwise disjoint vehicles inside
/// the world extent, centers in distinct output cells, and at least one center
/// in the critical area. Scene k draws from a seed derived from (seed, k).
std::vector<Scene> generate(std::size_t count, const GridSpec& grid, const SafetySpec& spec, std::uint64_t seed,
                            const VehicleSizeRange& sizes = {});

Scene generate_scene(std::uint64_t id, const GridSpec& grid, const SafetySpec& spec, std::uint64_t seed,
                     const VehicleSizeRange& sizes = {});

inline constexpr double kPerimeterValue = 1.0;
inline constexpr double kInteriorValue = 0.5;

/// Occupancy tensor (input_cells_h, input_cells_l, input_cells_w): cells touched
/// by a vehicle outline get 1, cells whose center is strictly inside a vehicle
/// get 0.5, all others 0. Every height slice is identical.
Tensor rasterize(const Scene& scene, const GridSpec& grid);

/// Marks the output cell holding each vehicle center as positive with targets
/// (cos, sin, dx, dy, log10 w, log10 l) relative to that cell's center.
LabelGrid encode_labels(const Scene& scene, const GridSpec& grid);

Sample make_sample(const Scene& scene, const GridSpec& grid);
std::vector<Sample> make_samples(const std::vector<Scene>& scenes, const GridSpec& grid);

void write_scenes(const std::vector<Scene>& scenes, std::ostream& os);
std::vector<Scene> read_scenes(std::istream& is);
void write_scenes(const std::vector<Scene>& scenes, const std::string& path);
std::vector<Scene> read_scenes(const std::string& path);

/// Detection record: scene id plus one box.
struct Detection {
    std::uint64_t scene = 0;
    OrientedBox box;
};

void write_detections(const std::vector<Detection>& dets, std::ostream& os);
std::vector<Detection> read_detections(std::istream& is);
void write_detections(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> read_detections(const std::string& path);

/// Decimal text with 17 significant digits.
std::string format_real(double v);

}  // namespace safebev
