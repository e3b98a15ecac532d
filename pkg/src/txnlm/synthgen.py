"""Synthetic multi-account transaction corpus with planted ground truth.

Every account gets a latent profile (demographics, banking attributes,
location, risk flags). Attribute values are planted into transaction
*descriptions* via per-attribute template pools, gated by ``signal_strength``:
at 0.0 descriptions are pure neutral noise, at 1.0 every labeled attribute is
guaranteed at least one tell-tale line. Income and average-balance signals
are planted into *amounts* (payroll size, spending scale) independently of
``signal_strength``, so text-blind methods can still see them.

Generation is independently seeded per account from the master seed, so
results never depend on scheduling or worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grammar import CREDIT, DEBIT
from .util import canonical_json, stable_hash

RISK_FLAG_NAMES = ("nsf", "stop", "unauth", "frozen")

TASK_IDS = (
    "gender",
    "1st_name",
    "age",
    "nsf",
    "stop",
    "unauth",
    "frozen",
    "suf",
    "ret",
    "debit_card",
    "inc",
    "bal",
    "fi",
    "act_type",
    "act_prof",
    "state1",
    "city1",
    "state2",
    "city2",
)

# fmt: off
FEMALE_NAMES = (
    "alice", "maria", "emma", "olivia", "sophia", "ava", "mia", "luna",
    "grace", "chloe", "ella", "aria", "lily", "nora", "ruby", "ivy",
    "stella", "hazel", "violet", "naomi", "delia", "wren", "pearl", "opal",
    "june",
)
MALE_NAMES = (
    "james", "liam", "noah", "oliver", "henry", "lucas", "theo", "owen",
    "leo", "miles", "ezra", "asher", "silas", "jude", "felix", "rhys",
    "hugo", "otis", "amos", "cyrus", "abel", "enzo", "ivan", "omar",
    "axel",
)
CITY_NAMES = (
    "springfield", "fairview", "riverton", "lakewood", "ashford",
    "brookhaven", "cedarville", "danbury", "elkton", "fernley", "granger",
    "harmony", "irvington", "jasper", "kenton", "linden", "mapleton",
    "newberry", "oakdale", "pinehurst", "quincy", "redmond", "seabrook",
    "tiverton", "union", "vernon", "weston", "yardley", "zephyr", "alton",
    "bristol", "clayton", "dover", "easton", "fulton", "georgetown",
    "hamlin", "ithaca", "juneau", "keystone", "lorain", "medford",
    "norwood", "orchard", "preston", "ridgway", "salem", "trenton",
    "verona", "winslow",
)
STATE_NAMES = (
    "al", "ak", "az", "ar", "ca", "co", "ct", "de", "fl", "ga", "hi", "id",
    "il", "in", "ia", "ks", "ky", "la", "me", "md", "ma", "mi", "mn", "ms",
    "mo", "mt", "ne", "nv", "nh", "nj", "nm", "ny", "nc", "nd", "oh", "ok",
    "or", "pa", "ri", "sc", "sd", "tn", "tx", "ut", "vt", "va", "wa", "wv",
    "wi", "wy",
)
_FI_PREFIXES = ("first", "union", "liberty", "summit", "pioneer",
                "heritage", "cascade", "granite", "harbor", "prairie")
_FI_SUFFIXES = ("national", "federal", "trust", "savings", "mutual")
FI_NAMES = tuple(f"{p} {s}" for p in _FI_PREFIXES for s in _FI_SUFFIXES)
# fmt: on

# A template is (format string, direction, amount class). Amount classes are
# log-normal families in dollars; "fee" is uniform 25..95, "payroll" is
# income-driven. Directions are fixed per template (the description determines
# the sign), and the debit/credit mix is kept near even across every pool so
# that neither direction token dominates the corpus.
NEUTRAL_TEMPLATES = (
    ("pos purchase plaza market", DEBIT, "small"),
    ("card purchase hardware depot", DEBIT, "medium"),
    ("fuel station pump premium", DEBIT, "small"),
    ("online order warehouse club {n6}", DEBIT, "medium"),
    ("ach web single payment utilities", DEBIT, "medium"),
    ("bill pay cable internet bundle", DEBIT, "medium"),
    ("check paper draft {n4}", DEBIT, "large"),
    ("atm cash withdrawal lobby", DEBIT, "medium"),
    ("subscription renewal news digest", DEBIT, "tiny"),
    ("wire transfer outgoing escrow", DEBIT, "large"),
    ("parking garage monthly ramp", DEBIT, "small"),
    ("mobile check deposit remote", CREDIT, "medium"),
    ("ach credit vendor settlement", CREDIT, "medium"),
    ("interest earned on balance", CREDIT, "tiny"),
    ("cashback rewards statement credit", CREDIT, "tiny"),
    ("marketplace seller payout weekly", CREDIT, "medium"),
    ("treasury bond coupon payment", CREDIT, "small"),
    ("rebate check issued {n4}", CREDIT, "small"),
)
PAYROLL_TEMPLATE = ("direct deposit payroll", CREDIT, "payroll")

NAME_TEMPLATES = (
    ("zelle transfer from {name} received", CREDIT, "small"),
    ("venmo payment to {name} sent", DEBIT, "small"),
    ("refund issued for {name} order", CREDIT, "small"),
    ("cash app payment {name} mobile", DEBIT, "tiny"),
)
CITY_TEMPLATES = (
    ("coffee roasters {city} downtown location", DEBIT, "tiny"),
    ("grocery mart {city} store purchase", DEBIT, "medium"),
    ("farmers market {city} vendor payout", CREDIT, "small"),
    ("utility rebate {city} municipal program", CREDIT, "small"),
)
STATE_TEMPLATES = (
    ("dmv renewal {state} vehicle registration", DEBIT, "medium"),
    ("toll road {state} express pass", DEBIT, "tiny"),
    ("{state} state tax refund issued", CREDIT, "large"),
    ("state park pass {state} annual permit", DEBIT, "small"),
)
FI_TEMPLATES = (
    ("{fi} monthly account service fee", DEBIT, "fee"),
    ("transfer from {fi} external account", CREDIT, "medium"),
)
AGE_POOLS = (
    (("campus dining hall meal plan", DEBIT, "small"),
     ("scholarship stipend award posted", CREDIT, "medium")),
    (("rideshare trip fare split evening", DEBIT, "small"),
     ("gig platform payout weekly earnings", CREDIT, "medium")),
    (("daycare tuition weekly autopay draft", DEBIT, "large"),
     ("childcare benefit reimbursement employer", CREDIT, "medium")),
    (("mortgage payment servicing autopay", DEBIT, "large"),
     ("youth soccer league season dues", DEBIT, "small")),
    (("college fund transfer recurring", DEBIT, "large"),
     ("orthodontist office visit copay", DEBIT, "medium")),
    (("golf club dues quarterly billing", DEBIT, "medium"),
     ("brokerage dividend income posted", CREDIT, "medium")),
    (("retirement seminar registration fee", DEBIT, "small"),
     ("rv park fee seasonal site", DEBIT, "small")),
    (("medicare supplement premium plan", DEBIT, "medium"),
     ("social security benefit deposit", CREDIT, "large")),
    (("estate planning office retainer", DEBIT, "large"),
     ("annuity payment received scheduled", CREDIT, "large")),
)
ACT_TYPE_POOLS = {
    "checking": (
        ("overdraft protection xfer checking account", DEBIT, "small"),
        ("checking rewards bonus posted monthly", CREDIT, "small"),
    ),
    "savings": (
        ("savings interest payment posted quarterly", CREDIT, "tiny"),
        ("auto transfer to savings scheduled", DEBIT, "medium"),
    ),
}
ACT_PROF_POOLS = {
    "personal": (
        ("streaming family plan monthly charge", DEBIT, "tiny"),
        ("personal cash gift received family", CREDIT, "small"),
    ),
    "business": (
        ("merchant services deposit batch settlement", CREDIT, "large"),
        ("vendor invoice net30 payable remit", DEBIT, "large"),
        ("business insurance premium quarterly installment", DEBIT, "medium"),
    ),
}
DEBIT_CARD_TEMPLATES = (
    ("debit card pos coffee shop swipe", DEBIT, "tiny"),
    ("debit card pos pharmacy counter copay", DEBIT, "small"),
    ("debit card pos bakery corner stand", DEBIT, "tiny"),
    ("debit card pos refund posted merchant", CREDIT, "small"),
)
RISK_POOLS = {
    "nsf": (
        ("nsf fee returned item", DEBIT, "fee"),
        ("insufficient funds fee", DEBIT, "fee"),
    ),
    "stop": (
        ("stop payment fee", DEBIT, "fee"),
        ("stop pay order confirmation", DEBIT, "fee"),
    ),
    "unauth": (
        ("unauthorized txn chargeback reversal", CREDIT, "medium"),
        ("dispute provisional credit", CREDIT, "medium"),
    ),
    "frozen": (
        ("legal order hold fee", DEBIT, "fee"),
        ("account freeze administrative fee", DEBIT, "fee"),
    ),
}

# (log-mean of dollars, log-sigma) per amount class. Medians straddle the
# $50-wide amount buckets so no single bucket absorbs most of the mass.
AMOUNT_CLASSES = {
    "tiny": (math.log(9.0), 0.5),
    "small": (math.log(55.0), 0.6),
    "medium": (math.log(170.0), 0.65),
    "large": (math.log(520.0), 0.8),
}

# Share of per-transaction signal lines assigned to each text attribute.
SIGNAL_WEIGHTS = (
    ("name", 0.26),
    ("city", 0.24),
    ("state", 0.11),
    ("fi", 0.08),
    ("age", 0.08),
    ("act_type", 0.06),
    ("act_prof", 0.07),
    ("debit_card", 0.10),
)
RISK_LINE_PROB = 0.05  # per transaction, per active flag, at signal 1
GUARANTEE_ORDER = RISK_FLAG_NAMES + (
    "name",
    "city",
    "state",
    "fi",
    "age",
    "act_type",
    "act_prof",
    "debit_card",
)


@dataclass(frozen=True)
class LatentProfile:
    """Planted per-account ground truth behind every downstream task."""

    gender: int
    name_id: int
    age_bucket: int
    state_id: int
    city_id: int
    income_bucket: int
    balance_bucket: int
    fi_id: int
    account_type: str
    account_profile: str
    has_debit_card: bool
    risk_flags: frozenset

    def validate(self, config: "GeneratorConfig") -> None:
        checks = (
            (0 <= self.gender <= 1),
            (0 <= self.name_id < len(FEMALE_NAMES) + len(MALE_NAMES)),
            (self.name_id < config.n_names_per_gender
             or len(FEMALE_NAMES) <= self.name_id
             < len(FEMALE_NAMES) + config.n_names_per_gender),
            (0 <= self.age_bucket < config.n_age_buckets),
            (0 <= self.state_id < config.n_states),
            (0 <= self.city_id < config.n_cities),
            (0 <= self.income_bucket < config.n_quantiles),
            (0 <= self.balance_bucket < config.n_quantiles),
            (0 <= self.fi_id < config.n_fis),
            (self.account_type in ("checking", "savings")),
            (self.account_profile in ("personal", "business")),
            self.risk_flags <= set(RISK_FLAG_NAMES),
        )
        if not all(checks):
            raise ValueError(f"profile outside config cardinalities: {self}")


@dataclass(frozen=True)
class Transaction:
    """One bank event; direction carries the sign of the amount."""

    timestamp: int
    direction: str
    amount_cents: int
    description: str

    def __post_init__(self):
        if self.amount_cents <= 0:
            raise ValueError("amount_cents must be positive")
        if not self.description:
            raise ValueError("description must be non-empty")


@dataclass(frozen=True)
class GeneratorConfig:
    n_accounts: int = 1000
    seed: int = 0
    # log-normal account length: median < 120 and well under 2% above 700
    length_median: float = 45.0
    length_sigma: float = 0.85
    signal_strength: float = 1.0
    n_names_per_gender: int = 25
    n_states: int = 50
    n_cities: int = 50
    n_fis: int = 50
    n_quantiles: int = 50
    n_age_buckets: int = 9
    nsf_rate: float = 0.08
    stop_rate: float = 0.02
    unauth_rate: float = 0.02
    frozen_rate: float = 0.01
    checking_rate: float = 0.8
    personal_rate: float = 0.85
    debit_card_rate: float = 0.6
    window_start: int = 1735689600  # 2025-01-01T00:00:00Z
    window_days: int = 90
    # chance that a non-payroll transaction carries a text-attribute line,
    # at signal_strength 1.0
    signal_txn_prob: float = 0.55
    # optional override of SIGNAL_WEIGHTS (same attribute names, positive
    # weights); None keeps the module defaults
    signal_weights: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        if self.n_accounts < 1:
            raise ValueError("n_accounts must be >= 1")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.signal_weights is not None:
            if {a for a, _ in self.signal_weights} != {a for a, _ in SIGNAL_WEIGHTS}:
                raise ValueError("signal_weights must cover exactly the known attributes")
            if any(w <= 0 for _, w in self.signal_weights):
                raise ValueError("signal_weights must be positive")
        for dim, limit in (
            (self.n_names_per_gender, min(len(FEMALE_NAMES), len(MALE_NAMES))),
            (self.n_states, len(STATE_NAMES)),
            (self.n_cities, len(CITY_NAMES)),
            (self.n_fis, len(FI_NAMES)),
            (self.n_age_buckets, len(AGE_POOLS)),
        ):
            if not 1 <= dim <= limit:
                raise ValueError(f"cardinality {dim} outside [1, {limit}]")

    def to_dict(self) -> dict:
        return asdict(self)


def account_id_for(index: int) -> str:
    return f"A{index:06d}"


def account_rng(config: GeneratorConfig, account_id: str) -> np.random.Generator:
    return np.random.default_rng(stable_hash(config.seed, "account", account_id))


def sample_profile(rng: np.random.Generator, config: GeneratorConfig) -> LatentProfile:
    """Draw one latent profile from the configured marginals."""
    gender = int(rng.integers(0, 2))
    if gender == 0:
        name_id = int(rng.integers(0, config.n_names_per_gender))
    else:
        name_id = len(FEMALE_NAMES) + int(rng.integers(0, config.n_names_per_gender))
    flags = frozenset(
        flag
        for flag, rate in zip(
            RISK_FLAG_NAMES,
            (config.nsf_rate, config.stop_rate, config.unauth_rate, config.frozen_rate),
        )
        if rng.random() < rate
    )
    return LatentProfile(
        gender=gender,
        name_id=name_id,
        age_bucket=int(rng.integers(0, config.n_age_buckets)),
        state_id=int(rng.integers(0, config.n_states)),
        city_id=int(rng.integers(0, config.n_cities)),
        income_bucket=int(rng.integers(0, config.n_quantiles)),
        balance_bucket=int(rng.integers(0, config.n_quantiles)),
        fi_id=int(rng.integers(0, config.n_fis)),
        account_type="checking" if rng.random() < config.checking_rate else "savings",
        account_profile="personal" if rng.random() < config.personal_rate else "business",
        has_debit_card=bool(rng.random() < config.debit_card_rate),
        risk_flags=flags,
    )


def _first_name(profile: LatentProfile) -> str:
    if profile.name_id < len(FEMALE_NAMES):
        return FEMALE_NAMES[profile.name_id]
    return MALE_NAMES[profile.name_id - len(FEMALE_NAMES)]


def _fill_template(fmt: str, profile: LatentProfile, rng: np.random.Generator) -> str:
    out = fmt
    if "{name}" in out:
        out = out.replace("{name}", _first_name(profile))
    if "{city}" in out:
        out = out.replace("{city}", CITY_NAMES[profile.city_id])
    if "{state}" in out:
        out = out.replace("{state}", STATE_NAMES[profile.state_id])
    if "{fi}" in out:
        out = out.replace("{fi}", FI_NAMES[profile.fi_id])
    if "{n4}" in out:
        out = out.replace("{n4}", f"{int(rng.integers(0, 10000)):04d}")
    if "{n6}" in out:
        out = out.replace("{n6}", f"{int(rng.integers(0, 1000000)):06d}")
    return out


def _attribute_pool(attr: str, profile: LatentProfile):
    if attr == "name":
        return NAME_TEMPLATES
    if attr == "city":
        return CITY_TEMPLATES
    if attr == "state":
        return STATE_TEMPLATES
    if attr == "fi":
        return FI_TEMPLATES
    if attr == "age":
        return AGE_POOLS[profile.age_bucket]
    if attr == "act_type":
        return ACT_TYPE_POOLS[profile.account_type]
    if attr == "act_prof":
        return ACT_PROF_POOLS[profile.account_profile]
    if attr == "debit_card":
        return DEBIT_CARD_TEMPLATES
    return RISK_POOLS[attr]


def _attr_applies(attr: str, profile: LatentProfile) -> bool:
    if attr == "debit_card":
        return profile.has_debit_card
    if attr in RISK_FLAG_NAMES:
        return attr in profile.risk_flags
    return True


def _amount_cents(
    amount_class: str,
    profile: LatentProfile,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> int:
    if amount_class == "payroll":
        # paycheck size is a clean function of the income bucket
        frac = profile.income_bucket / max(config.n_quantiles - 1, 1)
        annual = 28000.0 + 150000.0 * frac**1.25
        dollars = annual / 26.0 * rng.uniform(0.93, 1.07)
    elif amount_class == "fee":
        dollars = rng.uniform(25.0, 95.0)
    else:
        mu, sigma = AMOUNT_CLASSES[amount_class]
        # spending scale encodes the average-balance bucket
        frac = profile.balance_bucket / max(config.n_quantiles - 1, 1)
        wealth = math.exp(1.4 * (frac - 0.5))
        dollars = rng.lognormal(mu, sigma) * wealth
    return max(1, int(round(dollars * 100.0)))


def _pick_weighted_attr(
    rng: np.random.Generator, profile: LatentProfile, config: GeneratorConfig
) -> str:
    weights = config.signal_weights or SIGNAL_WEIGHTS
    attrs = [(a, w) for a, w in weights if _attr_applies(a, profile)]
    total = sum(w for _, w in attrs)
    u = rng.random() * total
    acc = 0.0
    for attr, w in attrs:
        acc += w
        if u < acc:
            return attr
    return attrs[-1][0]


def _make_line(
    template: tuple[str, str, str],
    ts: int,
    profile: LatentProfile,
    config: GeneratorConfig,
    rng: np.random.Generator,
) -> Transaction:
    fmt, direction, amount_class = template
    return Transaction(
        timestamp=ts,
        direction=direction,
        amount_cents=_amount_cents(amount_class, profile, config, rng),
        description=_fill_template(fmt, profile, rng),
    )


def generate_account_history(
    profile: LatentProfile,
    rng: np.random.Generator,
    config: GeneratorConfig,
) -> list[Transaction]:
    """One account's transactions, sorted by timestamp ascending."""
    profile.validate(config)
    s = config.signal_strength
    window = config.window_days * 86400

    n_total = max(1, int(round(rng.lognormal(math.log(config.length_median), config.length_sigma))))
    payroll_count = min(config.window_days // 14, n_total)

    lines: list[Transaction] = []
    kinds: list[str] = []  # parallel: "payroll" | "neutral" | attribute name

    for k in range(payroll_count):
        ts = config.window_start + int((k * 14 + rng.uniform(0.0, 2.0)) * 86400)
        ts = min(ts, config.window_start + window - 1)
        lines.append(_make_line(PAYROLL_TEMPLATE, ts, profile, config, rng))
        kinds.append("payroll")

    active_flags = [f for f in RISK_FLAG_NAMES if f in profile.risk_flags]
    for _ in range(n_total - payroll_count):
        ts = config.window_start + int(rng.integers(0, window))
        kind = "neutral"
        template = None
        for flag in active_flags:
            if rng.random() < s * RISK_LINE_PROB:
                kind = flag
                pool = RISK_POOLS[flag]
                template = pool[int(rng.integers(0, len(pool)))]
                break
        if template is None and rng.random() < s * config.signal_txn_prob:
            kind = _pick_weighted_attr(rng, profile, config)
            pool = _attribute_pool(kind, profile)
            template = pool[int(rng.integers(0, len(pool)))]
        if template is None:
            template = NEUTRAL_TEMPLATES[int(rng.integers(0, len(NEUTRAL_TEMPLATES)))]
        lines.append(_make_line(template, ts, profile, config, rng))
        kinds.append(kind)

    # With probability signal_strength, guarantee at least one line per
    # labeled attribute (risk flags first), replacing neutral lines in place
    # so the length distribution is untouched.
    for attr in GUARANTEE_ORDER:
        if not _attr_applies(attr, profile):
            continue
        if rng.random() >= s:
            continue
        if attr in kinds:
            continue
        replaceable = [i for i, k in enumerate(kinds) if k == "neutral"]
        if not replaceable:
            replaceable = [i for i, k in enumerate(kinds) if k == "payroll"]
        if not replaceable:
            continue
        idx = replaceable[int(rng.integers(0, len(replaceable)))]
        pool = _attribute_pool(attr, profile)
        template = pool[int(rng.integers(0, len(pool)))]
        lines[idx] = _make_line(template, lines[idx].timestamp, profile, config, rng)
        kinds[idx] = attr

    order = sorted(range(len(lines)), key=lambda i: (lines[i].timestamp, i))
    return [lines[i] for i in order]


def _generate_one(config: GeneratorConfig, index: int):
    account_id = account_id_for(index)
    rng = account_rng(config, account_id)
    profile = sample_profile(rng, config)
    history = generate_account_history(profile, rng, config)
    return account_id, history, profile


def generate_corpus(
    config: GeneratorConfig, n_workers: int = 1
) -> tuple[list[tuple[str, list[Transaction]]], dict[str, LatentProfile]]:
    """All account histories plus the latent profiles behind them."""
    indices = range(config.n_accounts)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(lambda i: _generate_one(config, i), indices))
    else:
        rows = [_generate_one(config, i) for i in indices]
    corpus = [(account_id, history) for account_id, history, _ in rows]
    labels = {account_id: profile for account_id, _, profile in rows}
    return corpus, labels


def emit_labels(labels: dict[str, LatentProfile], task_id: str) -> dict[str, int]:
    """Per-account target values for one downstream task."""
    if task_id not in TASK_IDS:
        raise KeyError(f"unknown task_id {task_id!r}")

    def value(p: LatentProfile) -> int:
        if task_id == "gender":
            return p.gender
        if task_id == "1st_name":
            return p.name_id
        if task_id == "age":
            return p.age_bucket
        if task_id in RISK_FLAG_NAMES:
            return int(task_id in p.risk_flags)
        if task_id == "suf":
            return int(not ({"stop", "unauth", "frozen"} & p.risk_flags))
        if task_id == "ret":
            return int(bool(p.risk_flags))
        if task_id == "debit_card":
            return int(p.has_debit_card)
        if task_id == "inc":
            return p.income_bucket
        if task_id == "bal":
            return p.balance_bucket
        if task_id == "fi":
            return p.fi_id
        if task_id == "act_type":
            return int(p.account_type == "savings")
        if task_id == "act_prof":
            return int(p.account_profile == "business")
        # single planted location serves both synthetic "providers"
        if task_id in ("state1", "state2"):
            return p.state_id
        return p.city_id  # city1 / city2

    return {account_id: value(profile) for account_id, profile in labels.items()}


def write_corpus_jsonl(path: str, corpus: Sequence[tuple[str, Sequence[Transaction]]]) -> None:
    """One account per line: account_id plus its transaction list."""
    with open(path, "w", encoding="utf-8") as fh:
        for account_id, transactions in corpus:
            row = {
                "account_id": account_id,
                "transactions": [
                    {
                        "ts": t.timestamp,
                        "dir": t.direction,
                        "amount_cents": t.amount_cents,
                        "desc": t.description,
                    }
                    for t in transactions
                ],
            }
            fh.write(canonical_json(row) + "\n")


def read_corpus_jsonl(path: str) -> list[tuple[str, list[Transaction]]]:
    corpus = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            corpus.append(
                (
                    row["account_id"],
                    [
                        Transaction(t["ts"], t["dir"], t["amount_cents"], t["desc"])
                        for t in row["transactions"]
                    ],
                )
            )
    return corpus


def write_labels_jsonl(path: str, labels: dict[str, LatentProfile]) -> None:
    """One account per line with the values of all downstream tasks."""
    per_task = {task: emit_labels(labels, task) for task in TASK_IDS}
    with open(path, "w", encoding="utf-8") as fh:
        for account_id in labels:
            row = {
                "account_id": account_id,
                "labels": {task: per_task[task][account_id] for task in TASK_IDS},
            }
            fh.write(canonical_json(row) + "\n")


def read_labels_jsonl(path: str) -> dict[str, dict[str, int]]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            out[row["account_id"]] = row["labels"]
    return out
