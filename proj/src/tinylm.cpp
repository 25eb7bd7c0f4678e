#include "epi/tinylm.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "epi/common.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace epi::tinylm {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMajor>;
using MutMat = Eigen::Map<RowMajor>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

ConstMat cmat(const double* p, std::size_t off, Eigen::Index r, Eigen::Index c) {
    return ConstMat(p + off, r, c);
}
MutMat mmat(double* p, std::size_t off, Eigen::Index r, Eigen::Index c) {
    return MutMat(p + off, r, c);
}
ConstVec cvec(const double* p, std::size_t off, Eigen::Index n) {
    return ConstVec(p + off, n);
}
MutVec mvec(double* p, std::size_t off, Eigen::Index n) {
    return MutVec(p + off, n);
}

double gelu(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }

double gelu_grad(double x) {
    const double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

void layer_norm_forward(const Eigen::MatrixXd& x, ConstVec gain, ConstVec bias,
                        Eigen::MatrixXd& xhat, Eigen::VectorXd& rstd,
                        Eigen::MatrixXd& y) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index d = x.cols();
    xhat.resize(rows, d);
    rstd.resize(rows);
    y.resize(rows, d);
    for (Eigen::Index t = 0; t < rows; ++t) {
        double mean = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) mean += x(t, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double c = x(t, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + kLnEps);
        rstd(t) = r;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double xh = (x(t, j) - mean) * r;
            xhat(t, j) = xh;
            y(t, j) = gain(j) * xh + bias(j);
        }
    }
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy,
                                    const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& rstd, ConstVec gain,
                                    MutVec dgain, MutVec dbias) {
    const Eigen::Index rows = dy.rows();
    const Eigen::Index d = dy.cols();
    Eigen::MatrixXd dx(rows, d);
    for (Eigen::Index t = 0; t < rows; ++t) {
        double m1 = 0.0;  // mean of dxhat
        double m2 = 0.0;  // mean of dxhat .* xhat
        for (Eigen::Index j = 0; j < d; ++j) {
            const double dxh = dy(t, j) * gain(j);
            m1 += dxh;
            m2 += dxh * xhat(t, j);
            dgain(j) += dy(t, j) * xhat(t, j);
            dbias(j) += dy(t, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            dx(t, j) = rstd(t) * (dy(t, j) * gain(j) - m1 - xhat(t, j) * m2);
        }
    }
    return dx;
}

struct LayerCache {
    Eigen::MatrixXd x_in;      // block input
    Eigen::MatrixXd ln1_xhat;
    Eigen::VectorXd ln1_rstd;
    Eigen::MatrixXd a;         // ln1 output
    Eigen::MatrixXd q, k, v;
    std::vector<Eigen::MatrixXd> probs;  // per-head causal attention weights
    Eigen::MatrixXd ctx;       // concatenated head contexts
    Eigen::MatrixXd x_mid;     // after attention residual
    Eigen::MatrixXd ln2_xhat;
    Eigen::VectorXd ln2_rstd;
    Eigen::MatrixXd b;         // ln2 output
    Eigen::MatrixXd f1;        // pre-activation
    Eigen::MatrixXd g;         // gelu(f1)
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Eigen::MatrixXd x_last;
    Eigen::MatrixXd lnf_xhat;
    Eigen::VectorXd lnf_rstd;
    Eigen::MatrixXd hidden;  // post final layer norm
    Eigen::MatrixXd logits;
};

void run_forward(const LanguageModel& m, std::span<const int> tokens,
                 ForwardCache& fc) {
    const auto& cfg = m.config();
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
    if (tokens.size() > static_cast<std::size_t>(cfg.max_context)) {
        throw ContextOverflow(tokens.size(), static_cast<std::size_t>(cfg.max_context));
    }
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index ff = cfg.d_ff;
    const Eigen::Index heads = cfg.n_heads;
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto layout = param_layout(cfg);
    const double* p = m.parameters().data();

    const auto tok_emb = cmat(p, layout.token_embedding, cfg.vocab_size, d);
    const auto pos_emb = cmat(p, layout.position_embedding, cfg.max_context, d);

    Eigen::MatrixXd x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        const int id = tokens[static_cast<std::size_t>(t)];
        if (id < 0 || id >= cfg.vocab_size) {
            throw seqdata::MalformedTokenStream("token id out of range: " +
                                                std::to_string(id));
        }
        x.row(t) = tok_emb.row(id) + pos_emb.row(t);
    }

    fc.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& lc = fc.layers[static_cast<std::size_t>(l)];
        const auto& off = layout.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;

        layer_norm_forward(lc.x_in, cvec(p, off.ln1_gain, d), cvec(p, off.ln1_bias, d),
                           lc.ln1_xhat, lc.ln1_rstd, lc.a);

        lc.q = lc.a * cmat(p, off.wq, d, d);
        lc.q.rowwise() += cvec(p, off.bq, d).transpose();
        lc.k = lc.a * cmat(p, off.wk, d, d);
        lc.k.rowwise() += cvec(p, off.bk, d).transpose();
        lc.v = lc.a * cmat(p, off.wv, d, d);
        lc.v.rowwise() += cvec(p, off.bv, d).transpose();

        lc.ctx.resize(T, d);
        lc.probs.assign(static_cast<std::size_t>(heads), Eigen::MatrixXd());
        for (Eigen::Index h = 0; h < heads; ++h) {
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            const auto vh = lc.v.middleCols(h * dh, dh);
            Eigen::MatrixXd scores = qh * kh.transpose() * scale;
            Eigen::MatrixXd& probs = lc.probs[static_cast<std::size_t>(h)];
            probs.setZero(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                // causal row softmax over j <= i
                double mx = scores(i, 0);
                for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
                double sum = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    const double e = std::exp(scores(i, j) - mx);
                    probs(i, j) = e;
                    sum += e;
                }
                for (Eigen::Index j = 0; j <= i; ++j) probs(i, j) /= sum;
            }
            lc.ctx.middleCols(h * dh, dh) = probs * vh;
        }

        Eigen::MatrixXd attn_out = lc.ctx * cmat(p, off.wo, d, d);
        attn_out.rowwise() += cvec(p, off.bo, d).transpose();
        lc.x_mid = lc.x_in + attn_out;

        layer_norm_forward(lc.x_mid, cvec(p, off.ln2_gain, d), cvec(p, off.ln2_bias, d),
                           lc.ln2_xhat, lc.ln2_rstd, lc.b);

        lc.f1 = lc.b * cmat(p, off.w1, d, ff);
        lc.f1.rowwise() += cvec(p, off.b1, ff).transpose();
        lc.g = lc.f1.unaryExpr([](double v) { return gelu(v); });
        Eigen::MatrixXd f2 = lc.g * cmat(p, off.w2, ff, d);
        f2.rowwise() += cvec(p, off.b2, d).transpose();
        x = lc.x_mid + f2;
    }

    fc.x_last = x;
    layer_norm_forward(fc.x_last, cvec(p, layout.final_ln_gain, d),
                       cvec(p, layout.final_ln_bias, d), fc.lnf_xhat, fc.lnf_rstd,
                       fc.hidden);
    fc.logits = fc.hidden * cmat(p, layout.output_weight, d, cfg.vocab_size);
    fc.logits.rowwise() += cvec(p, layout.output_bias, cfg.vocab_size).transpose();
}

// Backpropagates dlogits through the cached forward pass, accumulating into
// the flat gradient (same layout as the parameters).
void run_backward(const LanguageModel& m, std::span<const int> tokens,
                  const ForwardCache& fc, const Eigen::MatrixXd& dlogits,
                  std::vector<double>& grad) {
    const auto& cfg = m.config();
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index ff = cfg.d_ff;
    const Eigen::Index heads = cfg.n_heads;
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto layout = param_layout(cfg);
    const double* p = m.parameters().data();
    double* g = grad.data();

    mmat(g, layout.output_weight, d, cfg.vocab_size).noalias() +=
        fc.hidden.transpose() * dlogits;
    mvec(g, layout.output_bias, cfg.vocab_size) += dlogits.colwise().sum().transpose();
    Eigen::MatrixXd dy = dlogits * cmat(p, layout.output_weight, d, cfg.vocab_size).transpose();

    Eigen::MatrixXd dx = layer_norm_backward(
        dy, fc.lnf_xhat, fc.lnf_rstd, cvec(p, layout.final_ln_gain, d),
        mvec(g, layout.final_ln_gain, d), mvec(g, layout.final_ln_bias, d));

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lc = fc.layers[static_cast<std::size_t>(l)];
        const auto& off = layout.layers[static_cast<std::size_t>(l)];

        // feed-forward branch: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
        Eigen::MatrixXd df2 = dx;  // residual passthrough keeps dx for x_mid
        mmat(g, off.w2, ff, d).noalias() += lc.g.transpose() * df2;
        mvec(g, off.b2, d) += df2.colwise().sum().transpose();
        Eigen::MatrixXd dg_act = df2 * cmat(p, off.w2, ff, d).transpose();
        Eigen::MatrixXd df1 =
            dg_act.array() * lc.f1.unaryExpr([](double v) { return gelu_grad(v); }).array();
        mmat(g, off.w1, d, ff).noalias() += lc.b.transpose() * df1;
        mvec(g, off.b1, ff) += df1.colwise().sum().transpose();
        Eigen::MatrixXd db = df1 * cmat(p, off.w1, d, ff).transpose();
        Eigen::MatrixXd dx_mid =
            dx + layer_norm_backward(db, lc.ln2_xhat, lc.ln2_rstd,
                                     cvec(p, off.ln2_gain, d), mvec(g, off.ln2_gain, d),
                                     mvec(g, off.ln2_bias, d));

        // attention branch: x_mid = x_in + (ctx Wo + bo)
        Eigen::MatrixXd dattn = dx_mid;
        mmat(g, off.wo, d, d).noalias() += lc.ctx.transpose() * dattn;
        mvec(g, off.bo, d) += dattn.colwise().sum().transpose();
        Eigen::MatrixXd dctx = dattn * cmat(p, off.wo, d, d).transpose();

        Eigen::MatrixXd dq(T, d), dk(T, d), dv(T, d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const auto& probs = lc.probs[static_cast<std::size_t>(h)];
            const auto vh = lc.v.middleCols(h * dh, dh);
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            const auto dctx_h = dctx.middleCols(h * dh, dh);

            Eigen::MatrixXd dprobs = dctx_h * vh.transpose();
            dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dctx_h;

            Eigen::MatrixXd dscores(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                double dot = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) dot += dprobs(i, j) * probs(i, j);
                for (Eigen::Index j = 0; j < T; ++j) {
                    dscores(i, j) = j <= i ? probs(i, j) * (dprobs(i, j) - dot) : 0.0;
                }
            }
            dq.middleCols(h * dh, dh).noalias() = dscores * kh * scale;
            dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * qh * scale;
        }

        mmat(g, off.wq, d, d).noalias() += lc.a.transpose() * dq;
        mvec(g, off.bq, d) += dq.colwise().sum().transpose();
        mmat(g, off.wk, d, d).noalias() += lc.a.transpose() * dk;
        mvec(g, off.bk, d) += dk.colwise().sum().transpose();
        mmat(g, off.wv, d, d).noalias() += lc.a.transpose() * dv;
        mvec(g, off.bv, d) += dv.colwise().sum().transpose();

        Eigen::MatrixXd da = dq * cmat(p, off.wq, d, d).transpose() +
                             dk * cmat(p, off.wk, d, d).transpose() +
                             dv * cmat(p, off.wv, d, d).transpose();
        dx = dx_mid + layer_norm_backward(da, lc.ln1_xhat, lc.ln1_rstd,
                                          cvec(p, off.ln1_gain, d),
                                          mvec(g, off.ln1_gain, d),
                                          mvec(g, off.ln1_bias, d));
    }

    auto dtok = mmat(g, layout.token_embedding, cfg.vocab_size, d);
    auto dpos = mmat(g, layout.position_embedding, cfg.max_context, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        dtok.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
        dpos.row(t) += dx.row(t);
    }
}

// Number of predicted positions: tokens up to and including EOS, minus the
// BOS anchor. Trailing PAD is outside the prediction window.
std::size_t effective_length(const std::vector<int>& tokens) {
    std::size_t end = tokens.size();
    while (end > 0 && tokens[end - 1] == seqdata::kPad) --end;
    if (end < 2 || tokens[0] != seqdata::kBos || tokens[end - 1] != seqdata::kEos) {
        throw seqdata::MalformedTokenStream("expected BOS ... EOS [PAD]*");
    }
    return end;
}

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        double mx = logits(t, 0);
        for (Eigen::Index j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(t, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            sum += std::exp(logits(t, j) - mx);
        }
        const double lse = mx + std::log(sum);
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            out(t, j) = logits(t, j) - lse;
        }
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || max_context < 3) {
        throw BadConfig("all dimensions must be positive (max_context >= 3)");
    }
    if (d_model % n_heads != 0) {
        throw BadConfig("d_model must be divisible by n_heads");
    }
    if (vocab_size != seqdata::kVocabSize) {
        throw BadConfig("vocab_size must be " + std::to_string(seqdata::kVocabSize));
    }
}

ParamLayout param_layout(const ModelConfig& cfg) {
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);
    ParamLayout layout;
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
        const std::size_t off = at;
        at += n;
        return off;
    };
    layout.token_embedding = take(V * d);
    layout.position_embedding = take(static_cast<std::size_t>(cfg.max_context) * d);
    layout.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : layout.layers) {
        l.ln1_gain = take(d);
        l.ln1_bias = take(d);
        l.wq = take(d * d);
        l.bq = take(d);
        l.wk = take(d * d);
        l.bk = take(d);
        l.wv = take(d * d);
        l.bv = take(d);
        l.wo = take(d * d);
        l.bo = take(d);
        l.ln2_gain = take(d);
        l.ln2_bias = take(d);
        l.w1 = take(d * ff);
        l.b1 = take(ff);
        l.w2 = take(ff * d);
        l.b2 = take(d);
    }
    layout.final_ln_gain = take(d);
    layout.final_ln_bias = take(d);
    layout.output_weight = take(d * V);
    layout.output_bias = take(V);
    layout.total = at;
    return layout;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    return param_layout(cfg).total;
}

std::string LanguageModel::id() const {
    std::uint64_t h = kFnvOffset;
    const int fields[6] = {cfg_.n_layers, cfg_.d_model, cfg_.n_heads,
                           cfg_.d_ff, cfg_.max_context, cfg_.vocab_size};
    h = fnv1a64(fields, sizeof(fields), h);
    h = fnv1a64(&cfg_.seed, sizeof(cfg_.seed), h);
    h = fnv1a64(params_.data(), params_.size() * sizeof(double), h);
    return to_hex(h);
}

LanguageModel init_model(const ModelConfig& cfg) {
    cfg.validate();
    LanguageModel m;
    m.cfg_ = cfg;
    const auto layout = param_layout(cfg);
    m.params_.assign(layout.total, 0.0);
    Rng rng(cfg.seed);
    auto fill_normal = [&](std::size_t off, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            m.params_[off + i] = kInitStd * rng.normal();
        }
    };
    auto fill_ones = [&](std::size_t off, std::size_t n) {
        std::fill_n(m.params_.begin() + static_cast<std::ptrdiff_t>(off), n, 1.0);
    };
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    fill_normal(layout.token_embedding, V * d);
    fill_normal(layout.position_embedding, static_cast<std::size_t>(cfg.max_context) * d);
    for (const auto& l : layout.layers) {
        fill_ones(l.ln1_gain, d);
        fill_normal(l.wq, d * d);
        fill_normal(l.wk, d * d);
        fill_normal(l.wv, d * d);
        fill_normal(l.wo, d * d);
        fill_ones(l.ln2_gain, d);
        fill_normal(l.w1, d * ff);
        fill_normal(l.w2, ff * d);
    }
    fill_ones(layout.final_ln_gain, d);
    fill_normal(layout.output_weight, d * V);
    return m;
}

Eigen::MatrixXd forward_logits(const LanguageModel& m, std::span<const int> tokens) {
    ForwardCache fc;
    run_forward(m, tokens, fc);
    return std::move(fc.logits);
}

Eigen::MatrixXd forward_log_probs(const LanguageModel& m, std::span<const int> tokens) {
    return log_softmax_rows(forward_logits(m, tokens));
}

std::vector<Eigen::MatrixXd> forward(const LanguageModel& m,
                                     const std::vector<seqdata::TokenSequence>& batch) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(batch.size());
    for (const auto& t : batch) {
        out.push_back(forward_log_probs(m, t.ids));
    }
    return out;
}

Eigen::MatrixXd final_hidden_states(const LanguageModel& m, std::span<const int> tokens) {
    ForwardCache fc;
    run_forward(m, tokens, fc);
    return std::move(fc.hidden);
}

double sequence_log_prob(const LanguageModel& m, const std::vector<int>& tokens) {
    const std::size_t end = effective_length(tokens);
    const auto lp = forward_log_probs(
        m, std::span<const int>(tokens.data(), end));
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < end; ++t) {
        total += lp(static_cast<Eigen::Index>(t),
                    tokens[t + 1]);
    }
    return total;
}

double clm_loss(const LanguageModel& m, const std::vector<seqdata::TokenSequence>& batch) {
    if (batch.empty()) throw std::invalid_argument("clm_loss: empty batch");
    double nll = 0.0;
    std::size_t total = 0;
    for (const auto& t : batch) {
        const std::size_t end = effective_length(t.ids);
        nll -= sequence_log_prob(m, t.ids);
        total += end - 1;
    }
    return nll / static_cast<double>(total);
}

double clm_loss_grad(const LanguageModel& m,
                     const std::vector<seqdata::TokenSequence>& batch,
                     std::vector<double>& grad) {
    if (batch.empty()) throw std::invalid_argument("clm_loss_grad: empty batch");
    grad.assign(m.parameters().size(), 0.0);

    std::size_t total = 0;
    for (const auto& t : batch) total += effective_length(t.ids) - 1;
    const double inv_total = 1.0 / static_cast<double>(total);

    double nll = 0.0;
    ForwardCache fc;
    for (const auto& t : batch) {
        const std::size_t end = effective_length(t.ids);
        const std::span<const int> tokens(t.ids.data(), end);
        run_forward(m, tokens, fc);
        const auto lp = log_softmax_rows(fc.logits);

        Eigen::MatrixXd dlogits(lp.rows(), lp.cols());
        dlogits.setZero();
        for (std::size_t pos = 0; pos + 1 < end; ++pos) {
            const auto row = static_cast<Eigen::Index>(pos);
            const int target = t.ids[pos + 1];
            nll -= lp(row, target);
            for (Eigen::Index j = 0; j < lp.cols(); ++j) {
                dlogits(row, j) = std::exp(lp(row, j)) * inv_total;
            }
            dlogits(row, target) -= inv_total;
        }
        run_backward(m, tokens, fc, dlogits, grad);
    }
    return nll * inv_total;
}

double grad_check(LanguageModel m, const std::vector<seqdata::TokenSequence>& batch,
                  double epsilon, std::size_t subset_size, std::uint64_t seed) {
    if (!(epsilon > 0.0)) throw BadConfig("grad_check: epsilon must be positive");
    if (subset_size == 0) return 0.0;

    std::vector<double> analytic;
    clm_loss_grad(m, batch, analytic);

    const std::size_t n = m.parameters().size();
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(indices);
    indices.resize(std::min(subset_size, n));

    double worst = 0.0;
    auto& params = m.parameters();
    for (const std::size_t i : indices) {
        const double saved = params[i];
        params[i] = saved + epsilon;
        const double plus = clm_loss(m, batch);
        params[i] = saved - epsilon;
        const double minus = clm_loss(m, batch);
        params[i] = saved;
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double denom = std::max(std::abs(analytic[i]), std::abs(numeric));
        if (denom < 1e-7) continue;  // below the finite-difference noise floor
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw BadConfig("learning_rate must be positive");
    if (epochs < 1) throw BadConfig("epochs must be >= 1");
    if (weight_decay < 0.0) throw BadConfig("weight_decay must be non-negative");
    if (batch_size < 1) throw BadConfig("batch_size must be >= 1");
}

namespace {

std::vector<seqdata::TokenSequence> tokenize_dataset(const seqdata::Dataset& d,
                                                     const ModelConfig& cfg) {
    std::vector<seqdata::TokenSequence> out;
    out.reserve(d.records.size());
    for (const auto& rec : d.records) {
        auto t = seqdata::encode(rec.sequence);
        if (t.ids.size() > static_cast<std::size_t>(cfg.max_context)) {
            throw ContextOverflow(t.ids.size(),
                                  static_cast<std::size_t>(cfg.max_context));
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

TrainOutcome train(const LanguageModel& m, const seqdata::Dataset& train_set,
                   const seqdata::Dataset& val_set, const TrainConfig& tc) {
    tc.validate();
    if (train_set.records.empty()) throw BadConfig("train: empty training set");

    const auto train_tokens = tokenize_dataset(train_set, m.config());
    const auto val_tokens = tokenize_dataset(val_set, m.config());

    LanguageModel model = m;
    const std::size_t n_params = model.parameters().size();

    // AdamW state
    std::vector<double> grad(n_params, 0.0);
    std::vector<double> m1(n_params, 0.0);
    std::vector<double> m2(n_params, 0.0);
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double adam_eps = 1e-8;
    double beta1_t = 1.0;
    double beta2_t = 1.0;

    Rng rng(derive_seed(tc.seed, "train.shuffle"));
    std::vector<std::size_t> order(train_tokens.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainReport report;
    LanguageModel best_model = model;
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);

        double epoch_nll = 0.0;
        std::size_t epoch_tokens = 0;
        std::vector<seqdata::TokenSequence> batch;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            batch.clear();
            std::size_t batch_tokens = 0;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(train_tokens[order[i]]);
                batch_tokens += batch.back().ids.size() - 1;
            }
            const double loss = clm_loss_grad(model, batch, grad);
            if (!std::isfinite(loss)) {
                report.diverged = true;
                report.best_epoch = static_cast<int>(report.train_loss.size()) - 1;
                throw DivergenceDetected(std::move(report));
            }
            epoch_nll += loss * static_cast<double>(batch_tokens);
            epoch_tokens += batch_tokens;

            beta1_t *= beta1;
            beta2_t *= beta2;
            auto& params = model.parameters();
            const double bc1 = 1.0 - beta1_t;
            const double bc2 = 1.0 - beta2_t;
            for (std::size_t i = 0; i < n_params; ++i) {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
                const double mhat = m1[i] / bc1;
                const double vhat = m2[i] / bc2;
                params[i] -= tc.learning_rate *
                             (mhat / (std::sqrt(vhat) + adam_eps) +
                              tc.weight_decay * params[i]);
            }
        }
        report.train_loss.push_back(epoch_nll / static_cast<double>(epoch_tokens));

        if (!val_tokens.empty()) {
            const double vl = clm_loss(model, val_tokens);
            if (!std::isfinite(vl)) {
                report.diverged = true;
                report.best_epoch = static_cast<int>(report.train_loss.size()) - 1;
                throw DivergenceDetected(std::move(report));
            }
            report.val_loss.push_back(vl);
            if (vl < best_val) {
                best_val = vl;
                best_model = model;
                report.best_epoch = epoch;
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        report.epoch_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    if (val_tokens.empty()) {
        report.best_epoch = tc.epochs - 1;
        best_model = model;
    }
    return {std::move(best_model), std::move(report)};
}

void write_train_report_json(const TrainReport& r, const std::string& path) {
    nlohmann::json j{{"train_loss", r.train_loss},
                     {"val_loss", r.val_loss},
                     {"best_epoch", r.best_epoch},
                     {"diverged", r.diverged}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void write_train_report_tsv(const TrainReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(12);
    out << "epoch\ttrain_loss\tval_loss\n";
    for (std::size_t i = 0; i < r.train_loss.size(); ++i) {
        out << i << '\t' << r.train_loss[i] << '\t';
        if (i < r.val_loss.size()) {
            out << r.val_loss[i];
        } else {
            out << "NA";
        }
        out << '\n';
    }
}

namespace {

constexpr char kMagic[4] = {'E', 'P', 'L', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& at) {
    if (at + sizeof(T) > buf.size()) {
        throw CorruptCheckpoint("truncated checkpoint");
    }
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const LanguageModel& m, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put<std::uint32_t>(buf, kFormatVersion);
    const auto& cfg = m.config();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.n_layers));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.d_model));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.n_heads));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.d_ff));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.max_context));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.vocab_size));
    put<std::uint64_t>(buf, cfg.seed);
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.parameters().size()));
    buf.append(reinterpret_cast<const char*>(m.parameters().data()),
               m.parameters().size() * sizeof(double));
    put<std::uint32_t>(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

LanguageModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptCheckpoint("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());

    std::size_t at = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw CorruptCheckpoint("bad magic bytes");
    }
    at = 4;
    const auto version = get<std::uint32_t>(buf, at);
    if (version != kFormatVersion) {
        throw CorruptCheckpoint("unsupported format version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.n_layers = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.d_model = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.n_heads = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.d_ff = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.max_context = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.vocab_size = static_cast<int>(get<std::uint32_t>(buf, at));
    cfg.seed = get<std::uint64_t>(buf, at);
    if (cfg.vocab_size != seqdata::kVocabSize) {
        throw CorruptCheckpoint(
            "checkpoint vocab_size " + std::to_string(cfg.vocab_size) +
            " does not match this build's residue vocabulary (" +
            std::to_string(seqdata::kVocabSize) + ")");
    }
    try {
        cfg.validate();
    } catch (const BadConfig& e) {
        throw CorruptCheckpoint(std::string("invalid config block: ") + e.what());
    }
    const auto count = get<std::uint64_t>(buf, at);
    if (count != parameter_count(cfg)) {
        throw CorruptCheckpoint("parameter count does not match config");
    }
    if (at + count * sizeof(double) + sizeof(std::uint32_t) != buf.size()) {
        throw CorruptCheckpoint("unexpected file size");
    }
    LanguageModel m;
    m.cfg_ = cfg;
    m.params_.resize(count);
    std::memcpy(m.params_.data(), buf.data() + at, count * sizeof(double));
    at += count * sizeof(double);
    const auto stored_crc = get<std::uint32_t>(buf, at);
    const auto actual_crc = crc32(buf.data(), buf.size() - sizeof(std::uint32_t));
    if (stored_crc != actual_crc) {
        throw CorruptCheckpoint("checksum mismatch");
    }
    for (const double v : m.params_) {
        if (!std::isfinite(v)) throw CorruptCheckpoint("non-finite parameter");
    }
    return m;
}

}  // namespace epi::tinylm
