#pragma once

// File formats used by the command-line tool: the dataset CSV, model and
// ground-truth JSON, sequence and staging CSVs, and flat key=value config
// files.
//
// Dataset CSV: header `id,label,<feature>...`; label is one of control,
// patient, unknown; an empty cell is a missing value.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "vebm/core.hpp"
#include "vebm/model.hpp"
#include "vebm/synth.hpp"

namespace vebm {

/// Malformed input; the message carries the source and position.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

namespace io {

using Json = nlohmann::json;

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return std::string(s.substr(first, last - first + 1));
}

inline std::string lower(std::string s)
{
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct Field {
    std::string text;
    std::size_t column = 0; // 1-based character column where the field starts
};

// Splits one CSV record. Double-quoted fields may contain commas and
// doubled quotes; records may not span lines.
inline std::vector<Field> split_csv(std::string_view line, const std::string& source, std::size_t line_no)
{
    std::vector<Field> fields;
    std::size_t i = 0;
    while (true) {
        Field f;
        f.column = i + 1;
        if (i < line.size() && line[i] == '"') {
            ++i;
            bool closed = false;
            while (i < line.size()) {
                if (line[i] == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        f.text += '"';
                        i += 2;
                        continue;
                    }
                    closed = true;
                    ++i;
                    break;
                }
                f.text += line[i++];
            }
            if (!closed)
                throw ParseError(source + ":" + std::to_string(line_no) + ":" + std::to_string(f.column) +
                                 ": unterminated quoted field");
            if (i < line.size() && line[i] != ',')
                throw ParseError(source + ":" + std::to_string(line_no) + ":" + std::to_string(i + 1) +
                                 ": unexpected character after closing quote");
        } else {
            const auto end = line.find(',', i);
            f.text = std::string(line.substr(i, end == std::string_view::npos ? std::string_view::npos : end - i));
            i = end == std::string_view::npos ? line.size() : end;
        }
        fields.push_back(std::move(f));
        if (i >= line.size()) break;
        ++i; // skip the comma
        if (i == line.size()) {
            fields.push_back({std::string{}, i + 1});
            break;
        }
    }
    return fields;
}

inline std::string quote_csv(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline bool getline_lf(std::istream& is, std::string& line)
{
    if (!std::getline(is, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

} // namespace detail

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& where)
{
    const std::string t = detail::trim(text);
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (t.empty() || res.ec != std::errc{} || res.ptr != last)
        throw ParseError(where + ": expected a number, found '" + t + "'");
    return v;
}

inline Label parse_label(const std::string& text, const std::string& where)
{
    const std::string t = detail::lower(detail::trim(text));
    if (t == "control") return Label::Control;
    if (t == "patient") return Label::Patient;
    if (t == "unknown" || t.empty()) return Label::Unlabelled;
    throw ParseError(where + ": label must be control, patient or unknown, found '" + detail::trim(text) + "'");
}

inline std::string label_name(Label l)
{
    switch (l) {
    case Label::Control: return "control";
    case Label::Patient: return "patient";
    case Label::Unlabelled: return "unknown";
    }
    return "unknown";
}

inline Dataset read_dataset(std::istream& is, const std::string& source = "<input>")
{
    std::string line;
    std::size_t line_no = 0;
    if (!detail::getline_lf(is, line)) throw ParseError(source + ": empty file, expected a header row");
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv(line, source, line_no);
    if (header.empty() || detail::lower(detail::trim(header[0].text)) != "id")
        throw ParseError(source + ":1:1: missing required column 'id' (header must start with id,label)");
    if (header.size() < 2 || detail::lower(detail::trim(header[1].text)) != "label")
        throw ParseError(source + ":1:" + std::to_string(header.size() < 2 ? line.size() + 1 : header[1].column) +
                         ": missing required column 'label' (header must start with id,label)");
    if (header.size() < 3) throw ParseError(source + ":1: no feature columns after id,label");

    Dataset d;
    for (std::size_t k = 2; k < header.size(); ++k) {
        std::string name = detail::trim(header[k].text);
        if (name.empty())
            throw ParseError(source + ":1:" + std::to_string(header[k].column) + ": empty feature name");
        d.feature_names.push_back(std::move(name));
    }
    const std::size_t n_features = d.feature_names.size();

    std::vector<double> values;
    std::vector<char> observed;
    while (detail::getline_lf(is, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv(line, source, line_no);
        const std::string at = source + ":" + std::to_string(line_no);
        if (fields.size() != header.size())
            throw ParseError(at + ": expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        d.ids.push_back(detail::trim(fields[0].text));
        d.labels.push_back(parse_label(fields[1].text, at + ":" + std::to_string(fields[1].column)));
        for (std::size_t k = 2; k < fields.size(); ++k) {
            const std::string cell = detail::trim(fields[k].text);
            if (cell.empty()) {
                values.push_back(0.0);
                observed.push_back(0);
                continue;
            }
            const std::string where = at + ":" + std::to_string(fields[k].column);
            const double v = parse_double(cell, where);
            if (!std::isfinite(v)) throw ParseError(where + ": non-finite value '" + cell + "'");
            values.push_back(v);
            observed.push_back(1);
        }
    }
    if (d.ids.empty()) throw ParseError(source + ": no data rows");

    const auto rows = static_cast<Eigen::Index>(d.ids.size());
    const auto cols = static_cast<Eigen::Index>(n_features);
    d.values.resize(rows, cols);
    d.observed.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto k = static_cast<std::size_t>(i * cols + j);
            d.values(i, j) = values[k];
            d.observed(i, j) = observed[k] != 0;
        }
    return d;
}

inline void write_dataset(std::ostream& os, const Dataset& d)
{
    os << "id,label";
    for (std::size_t j = 0; j < d.n_features(); ++j)
        os << ',' << detail::quote_csv(d.feature_names.empty() ? "f" + std::to_string(j) : d.feature_names[j]);
    os << '\n';
    for (std::size_t i = 0; i < d.n_individuals(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        os << detail::quote_csv(d.ids.empty() ? std::to_string(i) : d.ids[i]) << ',' << label_name(d.labels[i]);
        for (Eigen::Index j = 0; j < d.values.cols(); ++j) {
            os << ',';
            if (d.observed(r, j)) os << format_double(d.values(r, j));
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------- JSON ----

inline std::string decoder_name(Decoder d) { return d == Decoder::Hungarian ? "hungarian" : "barycentre"; }
inline std::string init_name(ScoreInit i) { return i == ScoreInit::Zero ? "zero" : "frequency"; }

inline Decoder parse_decoder(const std::string& s)
{
    const std::string t = detail::lower(s);
    if (t == "hungarian") return Decoder::Hungarian;
    if (t == "barycentre" || t == "barycenter") return Decoder::Barycentre;
    throw Error("unknown decoder '" + s + "' (expected hungarian or barycentre)");
}

inline ScoreInit parse_init(const std::string& s)
{
    const std::string t = detail::lower(s);
    if (t == "zero") return ScoreInit::Zero;
    if (t == "frequency") return ScoreInit::Frequency;
    throw Error("unknown score initialisation '" + s + "' (expected zero or frequency)");
}

inline Json matrix_to_json(const Matrix& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what)
{
    if (!j.is_array()) throw ParseError(what + " must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ParseError(what + ": row " + std::to_string(i) + " has the wrong length");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
    return m;
}

inline Json config_to_json(const ModelConfig& c)
{
    return Json{{"tau", c.tau},
                {"tau_prior", c.tau_prior},
                {"n_s", c.n_s},
                {"n_opt", c.n_opt},
                {"learning_rate", c.learning_rate},
                {"use_gumbel_noise", c.use_gumbel_noise},
                {"seed", c.seed},
                {"decoder", decoder_name(c.decoder)},
                {"init", init_name(c.init)}};
}

inline ModelConfig config_from_json(const Json& j)
{
    ModelConfig c;
    c.tau = j.at("tau").get<double>();
    c.tau_prior = j.at("tau_prior").get<double>();
    c.n_s = j.at("n_s").get<int>();
    c.n_opt = j.at("n_opt").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.use_gumbel_noise = j.at("use_gumbel_noise").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.decoder = parse_decoder(j.value("decoder", std::string("hungarian")));
    c.init = parse_init(j.value("init", std::string("zero")));
    c.validate();
    return c;
}

inline Json mixtures_to_json(const MixtureParams& m, const std::vector<std::string>& names)
{
    Json out = Json::array();
    for (std::size_t j = 0; j < m.size(); ++j) {
        const auto& f = m.features[j];
        Json entry{{"mu_c", f.mu_c}, {"sigma_c", f.sigma_c}, {"mu_p", f.mu_p}, {"sigma_p", f.sigma_p}, {"w", f.w}};
        if (j < names.size()) entry["feature"] = names[j];
        out.push_back(std::move(entry));
    }
    return out;
}

inline MixtureParams mixtures_from_json(const Json& j)
{
    MixtureParams m;
    for (const auto& e : j) {
        FeatureMixture f;
        f.mu_c = e.at("mu_c").get<double>();
        f.sigma_c = e.at("sigma_c").get<double>();
        f.mu_p = e.at("mu_p").get<double>();
        f.sigma_p = e.at("sigma_p").get<double>();
        f.w = e.at("w").get<double>();
        if (!(f.sigma_c > 0.0) || !(f.sigma_p > 0.0)) throw ParseError("mixture sigma must be positive");
        if (!(f.w >= 0.0 && f.w <= 1.0)) throw ParseError("mixture weight must lie in [0, 1]");
        m.features.push_back(f);
    }
    return m;
}

inline Json model_to_json(const FittedModel& fm)
{
    return Json{{"format", "vebm-model"},
                {"version", 1},
                {"feature_names", fm.feature_names},
                {"sequence", fm.sequence.order()},
                {"x_scores", matrix_to_json(fm.x_scores)},
                {"mixtures", mixtures_to_json(fm.mixtures, fm.feature_names)},
                {"config", config_to_json(fm.config)},
                {"elbo_trace", fm.elbo_trace}};
}

/// Rebuilds a model; S is recomputed from the stored scores.
inline FittedModel model_from_json(const Json& j)
{
    try {
        if (j.value("format", std::string{}) != "vebm-model") throw ParseError("not a vebm model file");
        FittedModel fm;
        fm.config = config_from_json(j.at("config"));
        fm.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        fm.sequence = EventSequence(j.at("sequence").get<std::vector<int>>());
        fm.x_scores = matrix_from_json(j.at("x_scores"), "x_scores");
        fm.mixtures = mixtures_from_json(j.at("mixtures"));
        fm.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
        const std::size_t n = fm.sequence.size();
        if (static_cast<std::size_t>(fm.x_scores.rows()) != n || static_cast<std::size_t>(fm.x_scores.cols()) != n ||
            fm.mixtures.size() != n || (!fm.feature_names.empty() && fm.feature_names.size() != n))
            throw ParseError("model file is inconsistent: sequence, scores, mixtures and names differ in size");
        fm.soft_perm = sinkhorn(fm.x_scores, fm.config.tau, fm.config.n_s);
        return fm;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model file: ") + e.what());
    }
}

inline Json truth_to_json(const SynthData& s)
{
    std::vector<std::string> names;
    for (int e : s.truth.order()) names.push_back(s.dataset.feature_names[static_cast<std::size_t>(e)]);
    return Json{{"format", "vebm-truth"},
                {"sequence", s.truth.order()},
                {"sequence_features", names},
                {"stages", s.stages},
                {"patient_means", s.patient_means}};
}

inline Json synth_spec_to_json(const SynthSpec& s)
{
    return Json{{"individuals", s.n_individuals},
                {"features", s.n_features},
                {"sigma", s.sigma},
                {"control_fraction", s.control_fraction},
                {"patient_mean_lo", s.patient_mean_lo},
                {"patient_mean_hi", s.patient_mean_hi},
                {"missing_fraction", s.missing_fraction},
                {"seed", s.seed}};
}

// ------------------------------------------------------------ sequences ----

inline void write_sequence_csv(std::ostream& os, const EventSequence& s, const std::vector<std::string>& names)
{
    os << "position,event,feature\n";
    for (std::size_t p = 0; p < s.size(); ++p) {
        const int e = s[p];
        os << p << ',' << e << ','
           << detail::quote_csv(names.empty() ? std::to_string(e) : names[static_cast<std::size_t>(e)]) << '\n';
    }
}

inline EventSequence read_sequence_csv(std::istream& is, const std::string& source = "<input>")
{
    std::string line;
    if (!detail::getline_lf(is, line)) throw ParseError(source + ": empty file, expected a header row");
    const auto header = detail::split_csv(line, source, 1);
    if (header.size() < 2 || detail::trim(header[0].text) != "position" || detail::trim(header[1].text) != "event")
        throw ParseError(source + ":1:1: header must start with position,event");
    std::vector<std::pair<long, int>> rows;
    std::size_t line_no = 1;
    while (detail::getline_lf(is, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line, source, line_no);
        const std::string at = source + ":" + std::to_string(line_no);
        if (f.size() < 2) throw ParseError(at + ": expected at least 2 fields");
        const double pos = parse_double(f[0].text, at + ":" + std::to_string(f[0].column));
        const double ev = parse_double(f[1].text, at + ":" + std::to_string(f[1].column));
        if (pos != std::floor(pos) || ev != std::floor(ev)) throw ParseError(at + ": position and event must be integers");
        rows.emplace_back(static_cast<long>(pos), static_cast<int>(ev));
    }
    std::ranges::sort(rows);
    std::vector<int> order;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].first != static_cast<long>(k)) throw ParseError(source + ": positions must be 0..N-1 exactly once");
        order.push_back(rows[k].second);
    }
    try {
        return EventSequence(std::move(order));
    } catch (const Error& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline void write_stages_csv(std::ostream& os, const std::vector<StagePosterior>& stages, const std::vector<std::string>& ids)
{
    const std::size_t n_stages = stages.empty() ? 0 : stages.front().probabilities.size();
    os << "id,ml_stage";
    for (std::size_t k = 0; k < n_stages; ++k) os << ",p_" << k;
    os << '\n';
    for (std::size_t i = 0; i < stages.size(); ++i) {
        os << detail::quote_csv(i < ids.size() ? ids[i] : std::to_string(i)) << ',' << stages[i].ml_stage;
        for (double p : stages[i].probabilities) os << ',' << format_double(p);
        os << '\n';
    }
}

// --------------------------------------------------------------- config ----

/// Flat `key = value` text; `#` starts a comment. Keys are returned with
/// dashes folded to underscores.
inline std::map<std::string, std::string> read_config(std::istream& is, const std::string& source = "<config>")
{
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (detail::getline_lf(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (detail::trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(source + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::lower(detail::trim(std::string_view(line).substr(0, eq)));
        std::ranges::replace(key, '-', '_');
        if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
        out[key] = detail::trim(std::string_view(line).substr(eq + 1));
    }
    return out;
}

// ---------------------------------------------------------------- files ----

inline std::ifstream open_in(const std::filesystem::path& p)
{
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open '" + p.string() + "' for reading");
    return is;
}

/// Writes through a callback and reports failures as `IoError`.
template <typename Fn>
void write_file(const std::filesystem::path& p, Fn&& fn)
{
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    fn(os);
    os.flush();
    if (!os) throw IoError("failed writing '" + p.string() + "'");
}

inline Json read_json_file(const std::filesystem::path& p)
{
    auto is = open_in(p);
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& p, const Json& j)
{
    write_file(p, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline Dataset read_dataset_file(const std::filesystem::path& p)
{
    auto is = open_in(p);
    return read_dataset(is, p.string());
}

/// Reads an event sequence from a sequence CSV, a model JSON or a truth JSON.
inline EventSequence read_any_sequence(const std::filesystem::path& p)
{
    if (p.extension() == ".json") {
        const Json j = read_json_file(p);
        try {
            return EventSequence(j.at("sequence").get<std::vector<int>>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        } catch (const Error& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
    }
    auto is = open_in(p);
    return read_sequence_csv(is, p.string());
}

} // namespace io
} // namespace vebm
