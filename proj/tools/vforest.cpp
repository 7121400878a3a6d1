// vforest: synthetic forest voxel-content pipeline driver.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "vforest/io.hpp"
#include "vforest/parallel.hpp"
#include "vforest/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vf;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool deterministic = false;
    int threads = 0;
};

RunConfig load_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.scene.rng_seed = g.seed;
        cfg.train.seed = g.seed;
    }
    if (!g.out_override.empty()) cfg.out_dir = g.out_override;
    if (g.deterministic) set_worker_threads(1);
    else if (g.threads > 0) set_worker_threads(g.threads);
    cfg.validate();
    return cfg;
}

VoxelDataset dataset_from(const std::string& path, const RunConfig& cfg, const TriangleMesh*& mesh,
                          TriangleMesh& mesh_storage) {
    if (!path.empty()) {
        mesh = nullptr;
        return read_vxd1(path);
    }
    mesh_storage = generate_scene(cfg.scene);
    mesh = &mesh_storage;
    const StageResult stage = build_stage(mesh_storage, cfg, cfg.voxel_sizes.front());
    return stage.dataset;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vforest: voxel-content estimation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON run configuration (vf-config/1)");
    app.add_option("--seed", g.seed, "override the run seed")->each([&](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--out", g.out_override, "override the output directory");
    app.add_flag("--deterministic", g.deterministic, "single-threaded bit-reproducible mode");
    app.add_option("--threads", g.threads, "worker thread count");

    auto* gen = app.add_subcommand("gen-scene", "generate the synthetic forest mesh");
    auto* vox = app.add_subcommand("voxelize", "compute per-voxel material areas");
    std::string vox_mesh;
    double vox_size = 0.0;
    bool vox_exact = false;
    vox->add_option("--mesh", vox_mesh, "input mesh (.obj or VFM1); default: generate");
    vox->add_option("--voxel-size", vox_size, "voxel edge length in meters");
    vox->add_flag("--exact", vox_exact, "use the exact clipping voxelizer");

    auto* sim = app.add_subcommand("simulate", "cast rays and aggregate voxel intensity");
    std::string sim_mesh;
    double sim_size = 0.0;
    bool sim_dump = false;
    sim->add_option("--mesh", sim_mesh, "input mesh (.obj or VFM1); default: generate");
    sim->add_option("--voxel-size", sim_size, "voxel edge length in meters");
    sim->add_flag("--dump-waveforms", sim_dump, "also write the VFW1 waveform dump");

    auto* ds = app.add_subcommand("dataset", "build datasets for every configured voxel size");
    auto* tr = app.add_subcommand("train", "train the network on the first voxel size");
    std::string tr_dataset;
    tr->add_option("--dataset", tr_dataset, "prebuilt VXD1 dataset (default: build)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_dataset, ev_checkpoint;
    ev->add_option("--dataset", ev_dataset, "prebuilt VXD1 dataset (default: build)");
    ev->add_option("--checkpoint", ev_checkpoint, "VFK1 checkpoint")->required();

    auto* sw = app.add_subcommand("sweep", "voxel-size sensitivity sweep");
    auto* ab = app.add_subcommand("ablate", "train one model per axis value");
    std::string ab_axis = "loss_metric";
    ab->add_option("--axis", ab_axis, "loss_metric|weighting|focalr|K|R");

    auto* be = app.add_subcommand("bench", "timing and parameter-count table");
    int be_batches = 1000, be_points = 1000;
    be->add_option("--batches", be_batches, "batches to time");
    be->add_option("--points", be_points, "points per batch");

    auto* ex = app.add_subcommand("export-plots", "CSV tables for external plotting");
    std::string ex_dataset, ex_checkpoint;
    ex->add_option("--dataset", ex_dataset, "prebuilt VXD1 dataset (default: build)");
    ex->add_option("--checkpoint", ex_checkpoint, "optional VFK1 checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const RunConfig cfg = load_config(g);
        const std::string run_dir = make_run_dir(cfg);
        {
            std::ofstream cfg_out(run_dir + "/config.json");
            cfg_out << cfg.to_json() << '\n';
        }

        if (gen->parsed()) {
            const TriangleMesh mesh = generate_scene(cfg.scene);
            write_obj(mesh, run_dir + "/scene.obj");
            write_vfm1(mesh, run_dir + "/scene.vfm");
            const auto areas = mesh_material_areas(mesh);
            std::cout << "scene: " << mesh.triangles.size() << " triangles\n";
            for (int m = 0; m < kMaterialCount; ++m)
                std::cout << "  " << material_name(static_cast<Material>(m)) << " area "
                          << areas[m] << " m^2\n";
            std::cout << "wrote " << run_dir << "/scene.obj, scene.vfm\n";
        } else if (vox->parsed()) {
            TriangleMesh mesh =
                vox_mesh.empty() ? generate_scene(cfg.scene) : read_mesh(vox_mesh);
            const double size = vox_size > 0 ? vox_size : cfg.voxel_sizes.front();
            Aabb box = vox_mesh.empty() ? Aabb{} : mesh.bounds();
            if (vox_mesh.empty()) {
                box.expand({0, 0, 0});
                box.expand(cfg.scene.extent);
            }
            const VoxelGridSpec spec = VoxelGridSpec::covering(box, size);
            const MaterialAreaGrid grid = vox_exact ? voxelize_exact(mesh, spec)
                                                    : voxelize_sampled(mesh, spec, cfg.seed);
            write_vxa1(grid, run_dir + "/areas.vxa");
            write_area_csv(grid, run_dir + "/areas.csv");
            std::cout << "occupied voxels: " << grid.occupied_count() << ", total area "
                      << grid.total_area() << " m^2\nwrote " << run_dir << "/areas.vxa\n";
        } else if (sim->parsed()) {
            TriangleMesh mesh =
                sim_mesh.empty() ? generate_scene(cfg.scene) : read_mesh(sim_mesh);
            const double size = sim_size > 0 ? sim_size : cfg.voxel_sizes.front();
            Aabb box;
            box.expand({0, 0, 0});
            box.expand(sim_mesh.empty() ? cfg.scene.extent : mesh.bounds().hi);
            const VoxelGridSpec spec = VoxelGridSpec::covering(box, size, {0, 0, 0});
            const MaterialAreaGrid areas = voxelize_sampled(mesh, spec, cfg.seed);
            if (sim_dump) {
                const auto rays = cast_rays(mesh, areas, cfg.sensor, cfg.seed);
                write_vfw1(rays, run_dir + "/waveforms.vfw");
                std::vector<std::vector<VoxelFraction>> recs(rays.size());
                for (std::size_t i = 0; i < rays.size(); ++i)
                    recs[i] = voxel_fractions(rays[i], spec);
                write_vxi1(aggregate_intensity(recs, spec), run_dir + "/intensity.vxi");
            } else {
                write_vxi1(simulate_intensity(mesh, areas, cfg.sensor, cfg.seed),
                           run_dir + "/intensity.vxi");
            }
            std::cout << "wrote " << run_dir << "/intensity.vxi\n";
        } else if (ds->parsed()) {
            const TriangleMesh mesh = generate_scene(cfg.scene);
            std::vector<ManifestEntry> manifest;
            for (double size : cfg.voxel_sizes) {
                const StageResult stage = build_stage(mesh, cfg, size, run_dir);
                manifest.push_back(stage.manifest);
                std::cout << "voxel size " << size << ": " << stage.dataset.rows.size()
                          << " rows (" << stage.split.train_rows.size() << " train / "
                          << stage.split.test_rows.size() << " test)\n";
            }
            std::ofstream mf(run_dir + "/manifest.json");
            mf << manifest_to_json(manifest) << '\n';
            std::cout << "wrote " << run_dir << "/manifest.json\n";
        } else if (tr->parsed()) {
            const TriangleMesh* mesh = nullptr;
            TriangleMesh storage;
            VoxelDataset dataset = dataset_from(tr_dataset, cfg, mesh, storage);
            const BlockSplit split =
                block_split(dataset, cfg.split.section_size, cfg.split.test_fraction, cfg.seed);
            NetworkConfig net_cfg = cfg.network;
            net_cfg.voxel_size = dataset.spec.voxel_size;
            KpNetwork net = KpNetwork::build(net_cfg, cfg.seed);
            const RelevanceSetup relevance =
                RelevanceSetup::build(dataset, split.train_rows, cfg.relevance_method,
                                      cfg.histogram, cfg.merge_threshold);
            std::ofstream log(run_dir + "/train_log.jsonl");
            TrainConfig tc = cfg.train;
            tc.seed = cfg.seed;
            const TrainResult result =
                train_network(net, dataset, split.train_rows, relevance, cfg.loss, tc, &log);
            save_checkpoint(net, run_dir + "/checkpoint.vfk");
            std::cout << "steps: " << result.steps << ", final total loss "
                      << result.final_total_loss << "\nwrote " << run_dir << "/checkpoint.vfk\n";
            if (result.diverged) {
                std::cerr << "training diverged; last good parameters kept\n";
                return 2;
            }
        } else if (ev->parsed()) {
            const TriangleMesh* mesh = nullptr;
            TriangleMesh storage;
            VoxelDataset dataset = dataset_from(ev_dataset, cfg, mesh, storage);
            const BlockSplit split =
                block_split(dataset, cfg.split.section_size, cfg.split.test_fraction, cfg.seed);
            KpNetwork net = load_checkpoint(ev_checkpoint);
            const auto& rows = split.test_rows.empty() ? split.train_rows : split.test_rows;
            const EvalOutputs outputs = evaluate_model(net, dataset, rows, cfg.histogram);
            write_region_csv(outputs.reports, run_dir + "/eval_regions.csv");
            write_bin_error_csv(outputs.reports, run_dir + "/eval_bins.csv");
            std::ofstream js(run_dir + "/eval_summary.json");
            js << reports_to_json(outputs.reports) << '\n';
            std::cout << reports_to_json(outputs.reports) << "\nwrote " << run_dir
                      << "/eval_regions.csv\n";
        } else if (sw->parsed()) {
            const auto outcomes = sweep_voxel_sizes(cfg, run_dir);
            for (const RunOutcome& o : outcomes) {
                std::cout << "voxel size " << o.voxel_size << ": "
                          << (o.error.empty() ? "ok" : ("failed - " + o.error)) << '\n';
            }
            std::cout << "wrote " << run_dir << "/sweep.csv\n";
        } else if (ab->parsed()) {
            const auto rows = ablate(cfg, ablation_axis_from_name(ab_axis), run_dir);
            std::cout << "ablation rows: " << rows.size() * kMaterialCount << "\nwrote "
                      << run_dir << "/ablation.csv\n";
        } else if (be->parsed()) {
            const auto rows = bench(cfg, be_batches, be_points);
            write_bench_csv(rows, run_dir + "/bench.csv");
            for (const BenchRow& row : rows)
                std::cout << row.name << ": " << row.parameter_count << " params, "
                          << row.mean_batch_ms << " ms/batch\n";
            std::cout << "wrote " << run_dir << "/bench.csv\n";
        } else if (ex->parsed()) {
            const TriangleMesh* mesh = nullptr;
            TriangleMesh storage;
            VoxelDataset dataset = dataset_from(ex_dataset, cfg, mesh, storage);
            if (ex_checkpoint.empty()) {
                export_plots(dataset, cfg, run_dir);
            } else {
                const KpNetwork net = load_checkpoint(ex_checkpoint);
                export_plots(dataset, cfg, run_dir, &net);
            }
            std::cout << "wrote relevance & histogram CSVs to " << run_dir << '\n';
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
