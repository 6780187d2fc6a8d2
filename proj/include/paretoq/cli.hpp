#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "paretoq/bitpack.hpp"
#include "paretoq/pareto.hpp"
#include "paretoq/qat.hpp"
#include "paretoq/qgemm.hpp"
#include "paretoq/quant.hpp"

namespace paretoq {

// --- config ----------------------------------------------------------------

inline Granularity granularity_from_string(const std::string& s) {
    if (s == "channel") return Granularity::PerChannel;
    if (s == "tensor") return Granularity::PerTensor;
    throw InvalidSpec("granularity: expected 'channel' or 'tensor', got '" + s + "'");
}

/// Strict parse: unknown keys and wrong types are errors that name the field.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    BitWidth bits = BitWidth::b2;
    Granularity gran = Granularity::PerChannel;
    if (!j.is_object()) throw InvalidSpec("config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "seed") cfg.seed = value.get<std::uint32_t>();
            else if (key == "n_samples") cfg.n_samples = value.get<std::size_t>();
            else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
            else if (key == "input_dim") cfg.input_dim = value.get<std::size_t>();
            else if (key == "hidden") cfg.hidden = value.get<std::size_t>();
            else if (key == "n_classes") cfg.n_classes = value.get<std::size_t>();
            else if (key == "fp_lr") cfg.fp_lr = value.get<float>();
            else if (key == "qat_lr") cfg.qat_lr = value.get<float>();
            else if (key == "beta1") cfg.beta1 = value.get<float>();
            else if (key == "beta2") cfg.beta2 = value.get<float>();
            else if (key == "fp_weight_decay") cfg.fp_weight_decay = value.get<float>();
            else if (key == "qat_weight_decay") cfg.qat_weight_decay = value.get<float>();
            else if (key == "bits") bits = bitwidth_from_string(value.is_string() ? value.get<std::string>()
                                                                                  : value.dump());
            else if (key == "granularity") gran = granularity_from_string(value.get<std::string>());
            else if (key == "alpha_grad_scale") {
                if (!value.is_null()) cfg.alpha_grad_scale = value.get<float>();
            } else {
                throw InvalidSpec("config: unknown field '" + key + "'");
            }
        } catch (const nlohmann::json::exception&) {
            throw InvalidSpec("config: field '" + key + "' has the wrong type");
        }
    }
    cfg.spec = QuantSpec::paretoq(bits, gran);
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidSpec("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return train_config_from_json(j);
}

namespace detail {

// --- small CSV helpers -------------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double_field(const std::string& s, const std::string& field, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InvalidSpec("field '" + field + "' on line " + std::to_string(line_no) + " is not a number: '" +
                          s + "'");
    }
}

/// Headerless numeric CSV -> matrix; every row must have the same width.
inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidSpec("matrix file: cannot open '" + path + "'");
    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<float> row;
        for (const std::string& cell : split_csv_line(line))
            row.push_back(static_cast<float>(parse_double_field(cell, "matrix entry", line_no)));
        if (!rows.empty() && row.size() != rows.front().size())
            throw InvalidSpec("matrix file: line " + std::to_string(line_no) + " has " +
                              std::to_string(row.size()) + " columns, expected " +
                              std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InvalidSpec("matrix file: '" + path + "' is empty");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c];
    return m;
}

inline std::vector<ParetoPoint> read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidSpec("points file: cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    std::vector<ParetoPoint> pts;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split_csv_line(line);
        if (!header_seen) {
            if (cells.size() < 2 || cells[0] != "size_bytes" || cells[1] != "metric")
                throw InvalidSpec("points file: line 1 must be a 'size_bytes,metric[,label]' header");
            header_seen = true;
            continue;
        }
        if (cells.size() < 2)
            throw InvalidSpec("points file: line " + std::to_string(line_no) + " needs size_bytes and metric");
        ParetoPoint p;
        p.size_bytes = parse_double_field(cells[0], "size_bytes", line_no);
        p.metric = parse_double_field(cells[1], "metric", line_no);
        if (cells.size() > 2) p.label = cells[2];
        pts.push_back(std::move(p));
    }
    if (pts.empty()) throw InvalidSpec("points file: '" + path + "' has no data rows");
    return pts;
}

inline double parse_bits_value(const std::string& s) {
    static const std::pair<const char*, double> table[] = {
        {"1", 1.0}, {"1.58", 1.58}, {"2", 2.0}, {"3", 3.0}, {"4", 4.0}, {"8", 8.0}, {"16", 16.0}};
    for (const auto& [name, v] : table)
        if (s == name) return v;
    throw InvalidSpec("bits: expected one of 1, 1.58, 2, 3, 4, 8, 16, got '" + s + "'");
}

inline void print_bytes(std::ostream& os, double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        os << static_cast<long long>(v);
    } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        os << buf;
    }
}

inline std::vector<double> parse_double_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::size_t line_no = 1;
    for (const std::string& cell : split_csv_line(s)) out.push_back(parse_double_field(cell, what, line_no));
    return out;
}

inline std::ofstream open_out_file(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream f(path);
    if (!f) throw InvalidSpec("output: cannot write '" + path + "'");
    return f;
}

} // namespace detail

/// All subcommands write to `out`; diagnostics go to `err`. Returns the
/// process exit code so tests can drive the CLI in-process.
inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Low-bit quantization laboratory"};
    app.require_subcommand(1);

    std::uint32_t seed = 1;
    std::string config_path;
    std::string out_dir;
    app.add_option("--seed", seed, "Seed for training/benchmark subcommands");
    app.add_option("--config", config_path, "JSON training config file");
    app.add_option("--out", out_dir, "Directory for CSV artifacts (default: stdout only)");

    // Callbacks run at the tail of parse(), so option counts are reliable
    // here: an explicit --seed wins over the config file's seed.
    auto make_config = [&]() {
        TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
        if (app.count("--seed") > 0) cfg.seed = seed;
        return cfg;
    };

    // size ------------------------------------------------------------------
    auto* size_cmd = app.add_subcommand("size", "Effective quantized model size in bytes");
    long long size_nw = 0, size_ne = 0;
    std::string size_wbits = "16", size_ebits = "16";
    bool storage_honest = false;
    size_cmd->add_option("--n-weights", size_nw, "Body weight count")->required();
    size_cmd->add_option("--wbits", size_wbits, "Body weight bits (1, 1.58, 2, 3, 4, 8, 16)")->required();
    size_cmd->add_option("--n-embed", size_ne, "Embedding weight count");
    size_cmd->add_option("--ebits", size_ebits, "Embedding bits");
    size_cmd->add_flag("--storage-honest", storage_honest, "Count ternary at packed 1.6 bits, not log2(3)");
    size_cmd->callback([&] {
        SizeSpec s;
        s.n_weights = size_nw;
        s.weight_bits = detail::parse_bits_value(size_wbits);
        s.n_embedding_weights = size_ne;
        s.embedding_bits = detail::parse_bits_value(size_ebits);
        s.storage_honest = storage_honest;
        detail::print_bytes(out, effective_size(s));
        out << '\n';
    });

    // pareto ------------------------------------------------------------------
    auto* pareto_cmd = app.add_subcommand("pareto", "Extract the Pareto frontier from a points CSV");
    std::string pareto_in;
    std::string metric_dir = "higher";
    pareto_cmd->add_option("--in", pareto_in, "CSV with header size_bytes,metric[,label]")->required();
    pareto_cmd->add_option("--metric", metric_dir, "'higher' (accuracy-like) or 'lower' (loss-like)")
        ->check(CLI::IsMember({"higher", "lower"}));
    pareto_cmd->callback([&] {
        std::vector<ParetoPoint> pts = detail::read_points_csv(pareto_in);
        const bool lower = metric_dir == "lower";
        if (lower)
            for (ParetoPoint& p : pts) p.metric = -p.metric;
        std::vector<ParetoPoint> front = pareto_front(pts);
        if (lower) {
            out << "# metric: lower-is-better, negated for dominance\n";
            for (ParetoPoint& p : front) p.metric = -p.metric;
        }
        out << "size_bytes,metric,label\n";
        for (const ParetoPoint& p : front) out << p.size_bytes << ',' << p.metric << ',' << p.label << '\n';
    });

    // quantize ------------------------------------------------------------------
    auto* quant_cmd = app.add_subcommand("quantize", "Quantize a numeric CSV matrix into a packed file");
    std::string quant_in, quant_out, quant_bits = "2", quant_gran = "channel";
    quant_cmd->add_option("--in", quant_in, "Headerless numeric CSV, one matrix row per line")->required();
    quant_cmd->add_option("--out-file", quant_out, "Packed output path")->required();
    quant_cmd->add_option("--bits", quant_bits, "1, 1.58, 2, 3 or 4");
    quant_cmd->add_option("--granularity", quant_gran, "'channel' or 'tensor'");
    quant_cmd->callback([&] {
        const Matrix m = detail::read_matrix_csv(quant_in);
        const QuantSpec spec =
            QuantSpec::paretoq(bitwidth_from_string(quant_bits), granularity_from_string(quant_gran));
        const ChannelScales scales = init_scale(m, spec);
        const QuantOutput q = paretoq_forward(m, scales, spec);
        const PackedMatrix packed = encode(q, scales, pack_format_for(spec));
        write_pqpk(packed, quant_out);
        out << "rows,cols,format,payload_bytes,file_bytes\n";
        out << packed.rows << ',' << packed.cols << ',' << pack_format_name(packed.format) << ','
            << packed.payload.size() << ',' << serialize_pqpk(packed).size() << '\n';
    });

    // inspect ------------------------------------------------------------------
    auto* inspect_cmd = app.add_subcommand("inspect", "Describe a packed file and its level histogram");
    std::string inspect_in;
    inspect_cmd->add_option("--in", inspect_in, "Packed file path")->required();
    inspect_cmd->callback([&] {
        const PackedMatrix p = read_pqpk(inspect_in);
        out << "format,rows,cols,scales,payload_bytes\n";
        out << pack_format_name(p.format) << ',' << p.rows << ',' << p.cols << ',' << p.scales.size() << ','
            << p.payload.size() << '\n';
        std::vector<std::size_t> counts(p.level_table.size(), 0);
        std::vector<int> codes;
        for (std::size_t r = 0; r < p.rows; ++r) {
            decode_row_codes(p, r, codes);
            for (int c : codes) ++counts[static_cast<std::size_t>(c)];
        }
        out << "code,level,count\n";
        for (std::size_t c = 0; c < counts.size(); ++c)
            out << c << ',' << p.level_table[c] << ',' << counts[c] << '\n';
    });

    // bench ------------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "Time the dequantizing matrix-vector kernel");
    std::string bench_format = "all";
    long long bench_rows = 4096, bench_cols = 4096, bench_reps = 3;
    int bench_threads = 1;
    bench_cmd->add_option("--format", bench_format, "Pack format name or 'all'");
    bench_cmd->add_option("--rows", bench_rows, "Matrix rows");
    bench_cmd->add_option("--cols", bench_cols, "Matrix cols");
    bench_cmd->add_option("--reps", bench_reps, "Timed repetitions");
    bench_cmd->add_option("--threads", bench_threads, "Worker threads");
    bench_cmd->callback([&] {
        std::vector<PackFormat> formats;
        if (bench_format == "all") {
            formats = {PackFormat::Pack1,          PackFormat::PackTrit243, PackFormat::Pack2,
                       PackFormat::PackTernaryAs2Bit, PackFormat::Pack3,       PackFormat::Pack4};
        } else {
            formats = {pack_format_from_string(bench_format)};
        }
        out << bench_csv_header() << '\n';
        for (PackFormat f : formats) {
            const BenchReport rep = run_bench(f, static_cast<std::size_t>(bench_rows),
                                              static_cast<std::size_t>(bench_cols),
                                              static_cast<int>(bench_reps), bench_threads);
            out << bench_csv_row(rep) << '\n';
        }
    });

    // sweep ------------------------------------------------------------------
    auto* sweep_cmd = app.add_subcommand("sweep", "Budget-allocation sweep: FP phase then QAT phase per ratio");
    long long sweep_steps = 6000;
    std::string sweep_ratios;
    sweep_cmd->add_option("--total-steps", sweep_steps, "Total step budget per ratio");
    sweep_cmd->add_option("--ratios", sweep_ratios, "Comma list of FP fractions (default: the standard grid)");
    sweep_cmd->callback([&] {
        const TrainConfig cfg = make_config();
        const std::vector<double> ratios =
            sweep_ratios.empty() ? default_ratio_grid() : detail::parse_double_list(sweep_ratios, "ratio");
        const auto points = run_budget_sweep(cfg, sweep_steps, ratios);
        if (!out_dir.empty()) {
            auto f = detail::open_out_file(out_dir, "sweep_curves.csv");
            write_sweep_csv(f, cfg.seed, points);
            out << "# wrote " << (std::filesystem::path(out_dir) / "sweep_curves.csv").string() << '\n';
        }
        out << "ratio,seed,fp_steps,qat_steps,val_loss\n";
        for (const SweepPoint& pt : points)
            out << pt.ratio << ',' << cfg.seed << ',' << pt.fp_steps << ',' << pt.qat_steps << ','
                << pt.val_loss << '\n';
    });

    // fts ------------------------------------------------------------------
    auto* fts_cmd = app.add_subcommand("fts", "Finetune-vs-scratch comparison over a QAT budget grid");
    long long fts_fp_steps = 6000;
    std::string fts_grid = "250,750,1500,3000";
    fts_cmd->add_option("--fp-steps", fts_fp_steps, "Full-precision pretraining steps");
    fts_cmd->add_option("--grid", fts_grid, "Comma list of QAT budgets");
    fts_cmd->callback([&] {
        const TrainConfig cfg = make_config();
        std::vector<long> grid;
        for (double v : detail::parse_double_list(fts_grid, "qat_steps")) grid.push_back(std::lround(v));
        const FtsTable table = run_finetune_vs_scratch(cfg, fts_fp_steps, grid);
        if (!out_dir.empty()) {
            auto f = detail::open_out_file(out_dir, "fts.csv");
            write_fts_csv(f, cfg.seed, table);
            out << "# wrote " << (std::filesystem::path(out_dir) / "fts.csv").string() << '\n';
        }
        write_fts_csv(out, cfg.seed, table);
    });

    // drift ------------------------------------------------------------------
    auto* drift_cmd = app.add_subcommand("drift", "Relative L1 weight drift of a QAT finetune");
    long long drift_fp_steps = 6000, drift_qat_steps = 3000;
    drift_cmd->add_option("--fp-steps", drift_fp_steps, "Full-precision pretraining steps");
    drift_cmd->add_option("--qat-steps", drift_qat_steps, "QAT finetune steps");
    drift_cmd->callback([&] {
        const TrainConfig cfg = make_config();
        const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
        const ModelParams init = init_model(cfg, cfg.seed);
        const PhaseResult fp = train_phase(cfg, ds, init, drift_fp_steps, false, cfg.seed ^ 0xF00Du);
        const PhaseResult qat = train_phase(cfg, ds, fp.params, drift_qat_steps, true, cfg.seed ^ 0x0BADu);
        const DriftReport rep = weight_drift(quantizable_layers(fp.params), quantizable_layers(qat.params));
        out << "layer,drift\n";
        for (std::size_t l = 0; l < rep.per_layer.size(); ++l) out << l << ',' << rep.per_layer[l] << '\n';
        out << "mean," << rep.mean << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace paretoq
