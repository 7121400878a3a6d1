#include <fstream>
#include <sstream>

#include "vforest/io.hpp"
#include "vforest/pipeline.hpp"

#include "json.hpp"

namespace vf {

using nlohmann::json;

void SplitConfig::validate() const {
    if (section_size <= 0) throw ValidationError("split.section_size must be > 0");
    if (test_fraction < 0 || test_fraction >= 1)
        throw ValidationError("split.test_fraction must be in [0,1)");
    if (holdout_fraction < 0 || holdout_fraction >= 1)
        throw ValidationError("split.holdout_fraction must be in [0,1)");
}

void RunConfig::validate() const {
    scene.validate();
    if (voxel_sizes.empty()) throw ValidationError("grid.voxel_sizes must be non-empty");
    for (double v : voxel_sizes)
        if (v <= 0) throw ValidationError("voxel sizes must be positive");
    if (min_area <= 0) throw ValidationError("grid.min_area must be > 0");
    sensor.validate();
    histogram.validate();
    loss.validate();
    train.validate();
    split.validate();
}

namespace {

json sensor_to_json(const SensorConfig& s) {
    return json{{"altitude", s.altitude},       {"speed", s.speed},
                {"flight_lines", s.flight_lines}, {"side_overlap", s.side_overlap},
                {"pulse_rate", s.pulse_rate},     {"pulse_energy", s.pulse_energy},
                {"gate_range", s.gate_range},     {"wavelength_nm", s.wavelength_nm},
                {"ray_spacing", s.ray_spacing}};
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["schema"] = "vf-config/1";
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["scene"] = {{"extent", {scene.extent.x, scene.extent.y, scene.extent.z}},
                  {"tree_count", scene.tree_count},
                  {"shrub_count", scene.shrub_count},
                  {"misc_count", scene.misc_count},
                  {"leaf_density", scene.leaf_density},
                  {"rng_seed", scene.rng_seed}};
    j["grid"] = {{"voxel_sizes", voxel_sizes},
                 {"min_area", min_area},
                 {"exact_ground_truth", exact_ground_truth}};
    j["sensor"] = sensor_to_json(sensor);
    j["relevance"] = {{"method", relevance_method_name(relevance_method)},
                      {"bins", histogram.bin_count},
                      {"merge_threshold", merge_threshold}};
    j["loss"] = {{"regression_metric", loss.regression_metric == RegressionMetric::MSE ? "mse" : "l1"},
                 {"focalr_enabled", loss.focalr_enabled},
                 {"focalr_beta", loss.focalr_beta},
                 {"focalr_gamma", loss.focalr_gamma},
                 {"focalr_as_written", loss.focalr_as_written},
                 {"wmse_extra_inv_n", loss.wmse_extra_inv_n},
                 {"reg_coefficient", loss.reg_coefficient}};
    j["network"] = {{"stages", network.stages},
                    {"base_channels", network.base_channels},
                    {"kernel_points", network.kernel_points},
                    {"first_radius", network.first_radius},
                    {"first_subsample_dl", network.first_subsample_dl},
                    {"input_sphere_radius", network.input_sphere_radius},
                    {"sigma_ratio", network.sigma_ratio},
                    {"max_neighbors", network.max_neighbors},
                    {"rigid", network.rigid}};
    j["train"] = {{"epochs", train.epochs},
                  {"steps_per_epoch", train.steps_per_epoch},
                  {"learning_rate", train.learning_rate},
                  {"momentum", train.momentum},
                  {"decay_per_100_epochs", train.decay_per_100_epochs},
                  {"divergence_threshold", train.divergence_threshold},
                  {"max_sphere_points", train.max_sphere_points}};
    j["split"] = {{"section_size", split.section_size},
                  {"test_fraction", split.test_fraction},
                  {"holdout_fraction", split.holdout_fraction}};
    j["ablate"] = {{"kernel_points", ablate_kernel_points}, {"sphere_radii", ablate_sphere_radii}};
    return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config JSON parse error: ") + e.what());
    }
    if (j.value("schema", std::string("vf-config/1")) != "vf-config/1")
        throw ValidationError("unsupported config schema: " + j["schema"].get<std::string>());

    RunConfig cfg;
    get_if(j, "seed", cfg.seed);
    get_if(j, "out_dir", cfg.out_dir);
    if (j.contains("scene")) {
        const json& s = j["scene"];
        if (s.contains("extent")) {
            auto e = s["extent"].get<std::vector<double>>();
            if (e.size() != 3) throw ValidationError("scene.extent must have 3 entries");
            cfg.scene.extent = {e[0], e[1], e[2]};
        }
        get_if(s, "tree_count", cfg.scene.tree_count);
        get_if(s, "shrub_count", cfg.scene.shrub_count);
        get_if(s, "misc_count", cfg.scene.misc_count);
        get_if(s, "leaf_density", cfg.scene.leaf_density);
        get_if(s, "rng_seed", cfg.scene.rng_seed);
    }
    if (j.contains("grid")) {
        const json& g = j["grid"];
        get_if(g, "voxel_sizes", cfg.voxel_sizes);
        get_if(g, "min_area", cfg.min_area);
        get_if(g, "exact_ground_truth", cfg.exact_ground_truth);
    }
    if (j.contains("sensor")) {
        const json& s = j["sensor"];
        get_if(s, "altitude", cfg.sensor.altitude);
        get_if(s, "speed", cfg.sensor.speed);
        get_if(s, "flight_lines", cfg.sensor.flight_lines);
        get_if(s, "side_overlap", cfg.sensor.side_overlap);
        get_if(s, "pulse_rate", cfg.sensor.pulse_rate);
        get_if(s, "pulse_energy", cfg.sensor.pulse_energy);
        get_if(s, "gate_range", cfg.sensor.gate_range);
        get_if(s, "wavelength_nm", cfg.sensor.wavelength_nm);
        get_if(s, "ray_spacing", cfg.sensor.ray_spacing);
    }
    if (j.contains("relevance")) {
        const json& r = j["relevance"];
        if (r.contains("method"))
            cfg.relevance_method = relevance_method_from_name(r["method"].get<std::string>());
        get_if(r, "bins", cfg.histogram.bin_count);
        get_if(r, "merge_threshold", cfg.merge_threshold);
    }
    if (j.contains("loss")) {
        const json& l = j["loss"];
        if (l.contains("regression_metric")) {
            const auto name = l["regression_metric"].get<std::string>();
            if (name == "mse") cfg.loss.regression_metric = RegressionMetric::MSE;
            else if (name == "l1") cfg.loss.regression_metric = RegressionMetric::L1;
            else throw ValidationError("loss.regression_metric must be 'mse' or 'l1'");
        }
        get_if(l, "focalr_enabled", cfg.loss.focalr_enabled);
        get_if(l, "focalr_beta", cfg.loss.focalr_beta);
        get_if(l, "focalr_gamma", cfg.loss.focalr_gamma);
        get_if(l, "focalr_as_written", cfg.loss.focalr_as_written);
        get_if(l, "wmse_extra_inv_n", cfg.loss.wmse_extra_inv_n);
        get_if(l, "reg_coefficient", cfg.loss.reg_coefficient);
    }
    if (j.contains("network")) {
        const json& n = j["network"];
        get_if(n, "stages", cfg.network.stages);
        get_if(n, "base_channels", cfg.network.base_channels);
        get_if(n, "kernel_points", cfg.network.kernel_points);
        get_if(n, "first_radius", cfg.network.first_radius);
        get_if(n, "first_subsample_dl", cfg.network.first_subsample_dl);
        get_if(n, "input_sphere_radius", cfg.network.input_sphere_radius);
        get_if(n, "sigma_ratio", cfg.network.sigma_ratio);
        get_if(n, "max_neighbors", cfg.network.max_neighbors);
        get_if(n, "rigid", cfg.network.rigid);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        get_if(t, "epochs", cfg.train.epochs);
        get_if(t, "steps_per_epoch", cfg.train.steps_per_epoch);
        get_if(t, "learning_rate", cfg.train.learning_rate);
        get_if(t, "momentum", cfg.train.momentum);
        get_if(t, "decay_per_100_epochs", cfg.train.decay_per_100_epochs);
        get_if(t, "divergence_threshold", cfg.train.divergence_threshold);
        get_if(t, "max_sphere_points", cfg.train.max_sphere_points);
    }
    if (j.contains("split")) {
        const json& s = j["split"];
        get_if(s, "section_size", cfg.split.section_size);
        get_if(s, "test_fraction", cfg.split.test_fraction);
        get_if(s, "holdout_fraction", cfg.split.holdout_fraction);
    }
    if (j.contains("ablate")) {
        const json& a = j["ablate"];
        get_if(a, "kernel_points", cfg.ablate_kernel_points);
        get_if(a, "sphere_radii", cfg.ablate_sphere_radii);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::content_hash() const {
    const std::uint64_t h = io::fnv1a(to_json());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace vf
