#include "twinforge/rom.hpp"

#include "random.hpp"
#include "twinforge/digest.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace twinforge {

namespace {

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

void fill_uniform(Matrix& m, double r, detail::Rng& rng)
{
    for (double& v : m.flat()) v = rng.uniform(-r, r);
}

} // namespace

std::size_t RomModel::parameter_count() const noexcept
{
    const std::size_t m = state_dim();
    return m * (m + 1) + m + m * m + m + 1;
}

void RomModel::validate() const
{
    const std::size_t m = state_dim();
    require(n >= 1, ErrorCode::InvalidDimension, "model needs at least one output");
    require(w1.rows() == m && w1.cols() == m + 1, ErrorCode::InvalidDimension, "W1 must be (n+i) x (n+i+1)");
    require(w2.rows() == m && w2.cols() == m, ErrorCode::InvalidDimension, "W2 must be (n+i) x (n+i)");
    require(b1.size() == m && b2.size() == m, ErrorCode::InvalidDimension, "biases must have length n+i");
    require(norm.outputs.size() == n, ErrorCode::InvalidDimension, "normalization must cover every output");
    auto finite = [](double v) { return std::isfinite(v); };
    for (double v : pack_parameters(*this)) {
        require(finite(v), ErrorCode::ValidationFailure, "model parameters must be finite");
    }
    require(out_scale > 0.0, ErrorCode::ValidationFailure, "out_scale must be positive");
    for (const auto& a : norm.outputs) {
        require(finite(a.offset) && finite(a.scale) && a.scale > 0.0, ErrorCode::ValidationFailure,
                "output normalization scales must be positive");
    }
    require(finite(norm.input.offset) && norm.input.scale > 0.0 && norm.time_span > 0.0,
            ErrorCode::ValidationFailure, "input/time normalization scales must be positive");
}

std::vector<double> pack_parameters(const RomModel& model)
{
    std::vector<double> flat;
    flat.reserve(model.parameter_count());
    flat.insert(flat.end(), model.w1.flat().begin(), model.w1.flat().end());
    flat.insert(flat.end(), model.b1.begin(), model.b1.end());
    flat.insert(flat.end(), model.w2.flat().begin(), model.w2.flat().end());
    flat.insert(flat.end(), model.b2.begin(), model.b2.end());
    flat.push_back(model.out_scale);
    return flat;
}

void unpack_parameters(std::span<const double> flat, RomModel& model)
{
    require(flat.size() == model.parameter_count(), ErrorCode::InvalidDimension, "parameter vector length mismatch");
    auto it = flat.begin();
    auto take = [&](std::span<double> dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    take(model.w1.flat());
    take(model.b1);
    take(model.w2.flat());
    take(model.b2);
    model.out_scale = *it;
}

std::vector<double> RomGradient::flat() const
{
    std::vector<double> out;
    out.insert(out.end(), w1.flat().begin(), w1.flat().end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.flat().begin(), w2.flat().end());
    out.insert(out.end(), b2.begin(), b2.end());
    out.push_back(out_scale);
    return out;
}

RomModel init_model(std::size_t n, std::size_t i, std::uint64_t seed)
{
    require(n >= 1, ErrorCode::InvalidDimension, "init_model needs n >= 1");
    const std::size_t m = n + i;
    RomModel model;
    model.n = n;
    model.i = i;
    model.w1 = Matrix(m, m + 1);
    model.w2 = Matrix(m, m);
    model.b1.assign(m, 0.0);
    model.b2.assign(m, 0.0);
    model.out_scale = 1.0;
    model.norm.outputs.assign(n, Affine{});

    detail::Rng rng(seed);
    fill_uniform(model.w1, std::sqrt(6.0 / static_cast<double>(2 * m + 1)), rng);
    fill_uniform(model.w2, std::sqrt(6.0 / static_cast<double>(2 * m)), rng);
    return model;
}

RhsEvaluator::RhsEvaluator(const RomModel& model)
    : model_(&model), hidden_(model.state_dim()), output_(model.state_dim())
{
}

void RhsEvaluator::operator()(std::span<const double> state, double g, std::span<double> out,
                              std::span<double> hidden, std::span<double> output)
{
    const RomModel& mdl = *model_;
    const std::size_t m = mdl.state_dim();
    std::span<double> h = hidden.empty() ? std::span<double>(hidden_) : hidden;
    std::span<double> z = output.empty() ? std::span<double>(output_) : output;

    for (std::size_t r = 0; r < m; ++r) {
        const auto row = mdl.w1.row(r);
        double a = mdl.b1[r] + row[m] * g;
        for (std::size_t c = 0; c < m; ++c) a += row[c] * state[c];
        h[r] = sigmoid(a);
    }
    for (std::size_t r = 0; r < m; ++r) {
        const auto row = mdl.w2.row(r);
        double a = mdl.b2[r];
        for (std::size_t c = 0; c < m; ++c) a += row[c] * h[c];
        z[r] = sigmoid(a);
        out[r] = mdl.out_scale * (2.0 * z[r] - 1.0);
    }
}

std::vector<double> rhs(const RomModel& model, std::span<const double> state, double g)
{
    require(state.size() == model.state_dim(), ErrorCode::InvalidDimension, "state length must be n+i");
    std::vector<double> out(model.state_dim());
    RhsEvaluator eval(model);
    eval(state, g, out);
    return out;
}

std::vector<double> half_step_inputs(const ExcitationSignal& signal, const Affine& input_norm)
{
    const std::size_t n = signal.grid.n_samples;
    std::vector<double> g(2 * n - 1);
    for (std::size_t k = 0; k < n; ++k) {
        g[2 * k] = input_norm.normalize(signal.values[k]);
        if (k + 1 < n) {
            const double mid = sample_at(signal, signal.grid.t0 + (static_cast<double>(k) + 0.5) * signal.grid.dt);
            g[2 * k + 1] = input_norm.normalize(mid);
        }
    }
    return g;
}

Trajectory integrate(const RomModel& model, const ExcitationSignal& signal, std::span<const double> x0)
{
    require(x0.size() == model.n, ErrorCode::InvalidDimension, "x0 must have one value per output channel");
    RhsEvaluator eval(model);
    return integrate([&](std::span<const double> y, double g, double, std::span<double> out) { eval(y, g, out); },
                     model.state_dim(), signal, x0, model.norm);
}

double loss_mse(const Matrix& pred, const Matrix& target)
{
    require(pred.rows() == target.rows() && pred.cols() == target.cols() && !pred.empty(), ErrorCode::ShapeMismatch,
            "prediction and target shapes differ");
    double total = 0.0;
    for (std::size_t j = 0; j < pred.rows(); ++j) {
        double sum = 0.0;
        for (std::size_t k = 0; k < pred.cols(); ++k) {
            const double e = pred(j, k) - target(j, k);
            sum += e * e;
        }
        total += sum / static_cast<double>(pred.cols());
    }
    return total / static_cast<double>(pred.rows());
}

double loss_mse(std::span<const Matrix> preds, std::span<const Matrix> targets)
{
    require(preds.size() == targets.size() && !preds.empty(), ErrorCode::ShapeMismatch,
            "scenario counts differ or are empty");
    double sum = 0.0;
    for (std::size_t s = 0; s < preds.size(); ++s) sum += loss_mse(preds[s], targets[s]);
    return sum / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Portable model file

namespace {

void write_array(std::ostream& os, std::span<const double> values)
{
    os << '[';
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k) os << ", ";
        os << format_double(values[k]);
    }
    os << ']';
}

void write_affine(std::ostream& os, const Affine& a)
{
    os << "{\"offset\": " << format_double(a.offset) << ", \"scale\": " << format_double(a.scale) << '}';
}

std::vector<double> read_array(const nlohmann::json& j, std::size_t expected, const char* name)
{
    auto v = j.at(name).get<std::vector<double>>();
    if (v.size() != expected) {
        fail(ErrorCode::InvalidDimension, std::string("model field ") + name + " has wrong length");
    }
    return v;
}

} // namespace

std::string model_to_json(const RomModel& model)
{
    std::ostringstream os;
    os << "{\n  \"version\": \"" << kModelFormatVersion << "\",\n";
    os << "  \"n\": " << model.n << ",\n  \"i\": " << model.i << ",\n";
    os << "  \"W1\": ";
    write_array(os, model.w1.flat());
    os << ",\n  \"b1\": ";
    write_array(os, model.b1);
    os << ",\n  \"W2\": ";
    write_array(os, model.w2.flat());
    os << ",\n  \"b2\": ";
    write_array(os, model.b2);
    os << ",\n  \"out_scale\": " << format_double(model.out_scale) << ",\n";
    os << "  \"norm\": {\n    \"outputs\": [";
    for (std::size_t j = 0; j < model.norm.outputs.size(); ++j) {
        if (j) os << ", ";
        write_affine(os, model.norm.outputs[j]);
    }
    os << "],\n    \"input\": ";
    write_affine(os, model.norm.input);
    os << ",\n    \"time_span\": " << format_double(model.norm.time_span) << "\n  }\n}\n";
    return os.str();
}

RomModel model_from_json(const std::string& text)
{
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseFailure, std::string("model file: ") + e.what());
    }
    try {
        const auto version = doc.at("version").get<std::string>();
        if (version != kModelFormatVersion) {
            fail(ErrorCode::VersionMismatch,
                 "model file version '" + version + "', expected '" + std::string(kModelFormatVersion) + "'");
        }
        RomModel model;
        model.n = doc.at("n").get<std::size_t>();
        model.i = doc.at("i").get<std::size_t>();
        require(model.n >= 1, ErrorCode::InvalidDimension, "model file has n < 1");
        const std::size_t m = model.state_dim();
        model.w1 = Matrix(m, m + 1);
        model.w2 = Matrix(m, m);
        const auto w1 = read_array(doc, m * (m + 1), "W1");
        const auto w2 = read_array(doc, m * m, "W2");
        std::copy(w1.begin(), w1.end(), model.w1.flat().begin());
        std::copy(w2.begin(), w2.end(), model.w2.flat().begin());
        model.b1 = read_array(doc, m, "b1");
        model.b2 = read_array(doc, m, "b2");
        model.out_scale = doc.at("out_scale").get<double>();
        const auto& norm = doc.at("norm");
        for (const auto& a : norm.at("outputs")) {
            model.norm.outputs.push_back({a.at("offset").get<double>(), a.at("scale").get<double>()});
        }
        model.norm.input = {norm.at("input").at("offset").get<double>(), norm.at("input").at("scale").get<double>()};
        model.norm.time_span = norm.at("time_span").get<double>();
        model.validate();
        return model;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseFailure, std::string("model file: ") + e.what());
    }
}

void export_model(const RomModel& model, const std::filesystem::path& path)
{
    model.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write model file " + path.string());
    out << model_to_json(model);
    if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

RomModel import_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open model file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

} // namespace twinforge
