import numpy as np
import pytest

from spectral_nsr.errors import (
    BadParams,
    EmptyRuleSet,
    FormatError,
    MixedScopes,
    NoBasisAvailable,
)
from spectral_nsr.graph import combinatorial_laplacian
from spectral_nsr.rules import (
    SpectralRule,
    apply_rule,
    builtin_template,
    compose_rules,
    load_rules,
    parse_rules,
    rule_coefficients,
    rule_operator,
)
from spectral_nsr.spectral import FrequencyResponse, eigendecompose, estimate_lambda_max, vertex_signal

from conftest import random_graph


@pytest.fixture
def basis30(rng):
    g = random_graph(rng, 30, density=0.2)
    lap = combinatorial_laplacian(g)
    return lap, eigendecompose(lap)


def unit_rule(rule_id="r", weight=1.0, scope=None):
    return SpectralRule(rule_id, FrequencyResponse(lambda lam: np.ones_like(lam)), weight, scope)


class TestRuleOperator:
    def test_identity_template(self, basis30):
        _, basis = basis30
        op = rule_operator(unit_rule(), basis=basis)
        assert np.abs(op.dense - np.eye(30)).max() <= 1e-9

    def test_lambda_template_reconstructs_laplacian(self, basis30):
        lap, basis = basis30
        op = rule_operator(SpectralRule("lam", FrequencyResponse(lambda lam: lam)), basis=basis)
        assert np.abs(op.dense - lap.matrix.toarray()).max() <= 1e-7

    def test_low_pass_matches_dense_oracle(self, basis30, rng):
        lap, basis = basis30
        rule = SpectralRule("lp", FrequencyResponse(lambda lam: 1.0 / (1.0 + lam)))
        op = rule_operator(rule, basis=basis)
        b = rng.standard_normal(30)
        vals, vecs = np.linalg.eigh(lap.matrix.toarray())
        oracle = vecs @ np.diag(1.0 / (1.0 + vals)) @ vecs.T @ b
        assert np.abs(apply_rule(op, vertex_signal(b)).values - oracle).max() <= 1e-8

    def test_dense_operator_symmetric(self, basis30, rng):
        _, basis = basis30
        op = rule_operator(SpectralRule("h", FrequencyResponse(lambda lam: np.exp(-lam))), basis=basis)
        assert np.abs(op.dense - op.dense.T).max() <= 1e-9

    def test_operator_eigenvalues_equal_template(self, basis30):
        _, basis = basis30
        template = FrequencyResponse(lambda lam: 1.0 / (1.0 + 2.0 * lam))
        op = rule_operator(SpectralRule("lp", template), basis=basis)
        got = np.sort(np.linalg.eigvalsh(op.dense))
        want = np.sort(template(basis.eigenvalues))
        assert np.abs(got - want).max() <= 1e-7

    def test_requires_basis_or_laplacian(self):
        with pytest.raises(NoBasisAvailable):
            rule_operator(unit_rule())

    def test_chebyshev_path_agrees_with_dense(self, basis30, rng):
        lap, basis = basis30
        lam_max = max(float(basis.eigenvalues[-1]), 1e-9)
        template = FrequencyResponse(lambda lam: np.exp(-0.7 * lam))
        rule = SpectralRule("heat", template)
        dense_op = rule_operator(rule, basis=basis)
        cheb_op = rule_operator(rule, laplacian=lap, lambda_max=lam_max, order=24)
        b = rng.standard_normal(30)
        dense_out = apply_rule(dense_op, vertex_signal(b)).values
        cheb_out = apply_rule(cheb_op, vertex_signal(b)).values
        # agreement bounded by the fit's sampled sup-norm error
        from spectral_nsr.spectral import sample_response

        grid = np.linspace(0, lam_max, 512)
        fit_err = np.abs(sample_response(cheb_op.chebyshev, grid) - template(grid)).max()
        assert np.abs(dense_out - cheb_out).max() <= fit_err * np.linalg.norm(b) + 1e-9

    def test_scope_masking_passes_outside_through(self, basis30, rng):
        _, basis = basis30
        scope = frozenset(range(10))
        rule = SpectralRule("scoped", FrequencyResponse(lambda lam: np.exp(-lam)), scope=scope)
        op = rule_operator(rule, basis=basis)
        b = rng.standard_normal(30)
        out = apply_rule(op, vertex_signal(b)).values
        assert np.allclose(out[10:], b[10:], atol=1e-12)
        # inside-scope result only sees the masked signal
        unscoped = rule_operator(SpectralRule("u", rule.template), basis=basis)
        masked = b.copy()
        masked[10:] = 0.0
        inner = (unscoped.dense @ masked)[:10]
        assert np.allclose(out[:10], inner, atol=1e-10)


class TestApplyRule:
    def test_identity(self, basis30, rng):
        _, basis = basis30
        op = rule_operator(unit_rule(), basis=basis)
        b = rng.standard_normal(30)
        assert np.abs(apply_rule(op, vertex_signal(b)).values - b).max() <= 1e-9

    def test_zero_signal(self, basis30):
        _, basis = basis30
        op = rule_operator(unit_rule(), basis=basis)
        assert np.allclose(apply_rule(op, vertex_signal(np.zeros(30))).values, 0.0, atol=0)

    def test_linearity(self, basis30, rng):
        _, basis = basis30
        op = rule_operator(SpectralRule("h", FrequencyResponse(lambda lam: np.exp(-lam))), basis=basis)
        b1, b2 = rng.standard_normal(30), rng.standard_normal(30)
        a = 1.7
        lhs = apply_rule(op, vertex_signal(a * b1 + b2)).values
        rhs = a * apply_rule(op, vertex_signal(b1)).values + apply_rule(op, vertex_signal(b2)).values
        assert np.abs(lhs - rhs).max() <= 1e-10 * max(np.abs(rhs).max(), 1.0)


class TestComposeRules:
    def three_rules(self, lam_max):
        return [
            SpectralRule("lp", builtin_template("low-pass", lam_max, beta=1.5), weight=0.7),
            SpectralRule("hp", builtin_template("high-pass", lam_max), weight=0.2),
            SpectralRule("band", builtin_template("band-pass", lam_max), weight=1.1),
        ]

    def test_single_rule_equals_rule_operator(self, basis30, rng):
        _, basis = basis30
        rule = SpectralRule("lp", FrequencyResponse(lambda lam: 1.0 / (1.0 + lam)), weight=1.0)
        composed = compose_rules([rule], basis=basis)
        single = rule_operator(rule, basis=basis)
        assert np.abs(composed.dense - single.dense).max() <= 1e-12

    def test_two_half_weight_copies_equal_one(self, basis30):
        _, basis = basis30
        template = FrequencyResponse(lambda lam: np.exp(-lam))
        halves = [SpectralRule("a", template, 0.5), SpectralRule("b", template, 0.5)]
        one = rule_operator(SpectralRule("c", template, 1.0), basis=basis)
        composed = compose_rules(halves, basis=basis)
        assert np.abs(composed.dense - one.dense).max() <= 1e-12

    def test_matches_term_by_term_application(self, basis30, rng):
        lap, basis = basis30
        lam_max = max(float(basis.eigenvalues[-1]), 1e-9)
        rules = self.three_rules(lam_max)
        composed = compose_rules(rules, basis=basis)
        ops = [rule_operator(r, basis=basis) for r in rules]
        for _ in range(50):
            b = rng.standard_normal(30)
            direct = apply_rule(composed, vertex_signal(b)).values
            summed = sum(r.weight * apply_rule(op, vertex_signal(b)).values for r, op in zip(rules, ops))
            assert np.abs(direct - summed).max() <= 1e-9

    def test_weight_scaling_scales_contribution(self, basis30, rng):
        _, basis = basis30
        template = FrequencyResponse(lambda lam: np.exp(-lam))
        other = SpectralRule("other", FrequencyResponse(lambda lam: np.ones_like(lam)), weight=1.0)
        b = rng.standard_normal(30)
        c = 3.0
        base = compose_rules([SpectralRule("r", template, 1.0), other], basis=basis)
        scaled = compose_rules([SpectralRule("r", template, c), other], basis=basis)
        base_out = apply_rule(base, vertex_signal(b)).values
        scaled_out = apply_rule(scaled, vertex_signal(b)).values
        other_out = apply_rule(rule_operator(other, basis=basis), vertex_signal(b)).values
        assert np.allclose(scaled_out - other_out, c * (base_out - other_out), atol=1e-9)

    def test_empty_rule_set(self, basis30):
        _, basis = basis30
        with pytest.raises(EmptyRuleSet):
            compose_rules([], basis=basis)

    def test_scoped_rules_rejected(self, basis30):
        _, basis = basis30
        scoped = unit_rule("s", scope=frozenset({1, 2}))
        with pytest.raises(MixedScopes):
            compose_rules([scoped, unit_rule()], basis=basis)

    def test_chebyshev_path_coefficient_sum(self, basis30, rng):
        lap, basis = basis30
        lam_max = max(float(basis.eigenvalues[-1]), 1e-9)
        rules = self.three_rules(lam_max)
        composed = compose_rules(rules, laplacian=lap, lambda_max=lam_max, order=12)
        rows = rule_coefficients(tuple(rules), lam_max, 12)
        weights = np.array([r.weight for r in rules])
        assert np.allclose(composed.chebyshev.coefficients, weights @ rows, atol=1e-12)


class TestBuiltinTemplates:
    def test_low_pass_small_beta_is_identity(self):
        template = builtin_template("low-pass", 2.0, beta=1e-12)
        grid = np.linspace(0, 2, 20)
        assert np.abs(template(grid) - 1.0).max() <= 1e-11

    def test_high_pass_zero_at_dc(self):
        template = builtin_template("high-pass", 2.0)
        assert template(np.array([0.0]))[0] == 0.0
        assert template(np.array([2.0]))[0] == pytest.approx(1.0)

    def test_heat_kernel_value(self):
        template = builtin_template("heat-kernel", 4.0, t=0.5)
        assert template(np.array([2.0]))[0] == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_band_pass_peaks_at_center(self):
        template = builtin_template("band-pass", 2.0, center=1.0, sigma=0.2)
        assert template(np.array([1.0]))[0] == pytest.approx(1.0)
        assert template(np.array([0.0]))[0] < 0.01

    @pytest.mark.parametrize(
        "kind,params",
        [("low-pass", {"beta": 0.0}), ("heat-kernel", {"t": -1.0}), ("band-pass", {"sigma": 0.0}), ("high-pass", {"gain": 0.0})],
    )
    def test_bad_params(self, kind, params):
        with pytest.raises(BadParams):
            builtin_template(kind, 2.0, **params)

    def test_unknown_kind(self):
        with pytest.raises(BadParams):
            builtin_template("notch", 2.0)


class TestRuleDsl:
    def test_parse_basic(self):
        text = "rule r1 kind=low-pass w=0.5 beta=2.0\nrule r2 kind=heat w=1.5 t=0.2 scope=0,3,5\n"
        rules = parse_rules(text, 2.0)
        assert [r.rule_id for r in rules] == ["r1", "r2"]
        assert rules[0].weight == 0.5
        assert rules[0].kind == "low-pass"
        assert rules[1].scope == frozenset({0, 3, 5})
        assert rules[1].kind == "heat-kernel"
        assert rules[1].template(np.array([1.0]))[0] == pytest.approx(np.exp(-0.2))

    def test_parse_custom_csv(self, tmp_path):
        (tmp_path / "resp.csv").write_text("0.0,1.0\n1.0,0.5\n2.0,0.0\n")
        rules = parse_rules("rule c kind=custom w=1 file=resp.csv\n", 2.0, base_dir=tmp_path)
        assert rules[0].template(np.array([0.5]))[0] == pytest.approx(0.75)

    def test_load_rules_file(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("# comment\nrule lp kind=low-pass w=1.0\n")
        rules = load_rules(path, 2.0)
        assert len(rules) == 1

    @pytest.mark.parametrize(
        "line",
        [
            "rule r1 w=1.0",  # missing kind
            "rule r1 kind=custom w=1.0",  # custom without file
            "rule r1 kind=low-pass w=abc",  # malformed weight
            "rule r1 kind=low-pass w=1.0 bogus=3",  # unknown key
            "rulex r1 kind=low-pass",  # unknown record
        ],
    )
    def test_parse_errors(self, line):
        with pytest.raises(FormatError):
            parse_rules(line + "\n", 2.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(BadParams):
            SpectralRule("r", FrequencyResponse(lambda lam: lam), weight=-0.1)
