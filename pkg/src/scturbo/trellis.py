"""Rate-1/2 recursive systematic convolutional codes and their trellises.

A code is given by a pair of octal generator polynomials (feedforward,
feedback).  Bit k of the octal value is the coefficient of D^k, i.e. the most
significant digit carries the highest-degree tap and the constant term of the
feedback polynomial multiplies the current input.  Example: "1,5/7" is the
4-state code with feedforward 1+D^2 and feedback 1+D+D^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field


def parse_generator(text: str) -> "GeneratorSpec":
    """Parse a config-style generator string like "1,5/7" (octal)."""
    s = text.replace(" ", "")
    if "," in s:
        sys_part, s = s.split(",", 1)
        if sys_part != "1":
            raise ValueError(f"only systematic rate-1/2 codes supported, got {text!r}")
    if "/" not in s:
        raise ValueError(f"expected 'ff/fb' octal pair in {text!r}")
    ff_s, fb_s = s.split("/", 1)
    try:
        ff = int(ff_s, 8)
        fb = int(fb_s, 8)
    except ValueError as exc:
        raise ValueError(f"invalid octal digits in generator {text!r}") from exc
    return GeneratorSpec(feedforward=ff, feedback=fb)


@dataclass(frozen=True)
class GeneratorSpec:
    """Octal generator pair of a recursive systematic rate-1/2 code."""

    feedforward: int
    feedback: int

    def __post_init__(self):
        if self.feedforward <= 0 or self.feedback <= 0:
            raise ValueError("generator polynomials must be positive")
        if self.feedback % 2 == 0:
            raise ValueError("feedback polynomial needs its constant term set")
        if self.memory == 0:
            raise ValueError("memoryless code (nu = 0) has no trellis")

    @property
    def memory(self) -> int:
        """Number of delay elements (degree of the higher-degree polynomial)."""
        return max(self.feedforward.bit_length(), self.feedback.bit_length()) - 1

    @property
    def num_states(self) -> int:
        return 1 << self.memory

    def octal_str(self) -> str:
        return f"1,{self.feedforward:o}/{self.feedback:o}"


# The three component codes used throughout: 2-, 4- and 8-state.
GEN_2STATE = GeneratorSpec(0o1, 0o3)
GEN_4STATE = GeneratorSpec(0o5, 0o7)
GEN_8STATE = GeneratorSpec(0o15, 0o13)

GENERATORS_BY_STATES = {2: GEN_2STATE, 4: GEN_4STATE, 8: GEN_8STATE}


def _parity_bits(x: int) -> int:
    return bin(x).count("1") & 1


@dataclass(frozen=True)
class Trellis:
    """Materialized branch table of a recursive systematic encoder.

    State integer s encodes the register (d_1 .. d_nu) with d_1 in the least
    significant bit.  ``next_state[u][s]`` / ``parity[u][s]`` give the branch
    for input bit u.  Immutable after construction; safe to share.
    """

    spec: GeneratorSpec
    num_states: int
    next_state: tuple[tuple[int, ...], tuple[int, ...]]
    parity: tuple[tuple[int, ...], tuple[int, ...]]
    # Predecessor tables of the time-reversed trellis: prev_state[u][s'] is the
    # unique state s with next_state[u][s] == s'; prev_parity matches it.
    prev_state: tuple[tuple[int, ...], tuple[int, ...]] = field(repr=False, default=None)
    prev_parity: tuple[tuple[int, ...], tuple[int, ...]] = field(repr=False, default=None)

    @property
    def memory(self) -> int:
        return self.spec.memory

    def reversed(self) -> "Trellis":
        """Trellis with all branches inverted (same labels)."""
        return Trellis(
            spec=self.spec,
            num_states=self.num_states,
            next_state=self.prev_state,
            parity=self.prev_parity,
            prev_state=self.next_state,
            prev_parity=self.parity,
        )


def build_trellis(spec: GeneratorSpec) -> Trellis:
    """Unroll the shift-register recursion of ``spec`` into a branch table."""
    nu = spec.memory
    n_states = 1 << nu
    mask = n_states - 1
    fb_hi = spec.feedback >> 1
    ff_hi = spec.feedforward >> 1
    ff0 = spec.feedforward & 1

    nxt = [[0] * n_states, [0] * n_states]
    par = [[0] * n_states, [0] * n_states]
    for s in range(n_states):
        fb_term = _parity_bits(s & fb_hi)
        ff_term = _parity_bits(s & ff_hi)
        for u in (0, 1):
            w = u ^ fb_term
            nxt[u][s] = ((s << 1) | w) & mask
            par[u][s] = (ff0 & w) ^ ff_term

    prev = [[0] * n_states, [0] * n_states]
    ppar = [[0] * n_states, [0] * n_states]
    seen = [[False] * n_states, [False] * n_states]
    for u in (0, 1):
        for s in range(n_states):
            sp = nxt[u][s]
            if seen[u][sp]:
                raise ValueError(
                    f"{spec.octal_str()}: two states share a next state for input {u}; "
                    "feedback polynomial degree must equal the memory"
                )
            seen[u][sp] = True
            prev[u][sp] = s
            ppar[u][sp] = par[u][s]

    return Trellis(
        spec=spec,
        num_states=n_states,
        next_state=(tuple(nxt[0]), tuple(nxt[1])),
        parity=(tuple(par[0]), tuple(par[1])),
        prev_state=(tuple(prev[0]), tuple(prev[1])),
        prev_parity=(tuple(ppar[0]), tuple(ppar[1])),
    )


def encode(trellis: Trellis, info, start_state: int = 0):
    """Run the encoder over ``info`` bits; returns (parity list, end state)."""
    if not 0 <= start_state < trellis.num_states:
        raise ValueError(f"start state {start_state} out of range")
    nxt0, nxt1 = trellis.next_state
    par0, par1 = trellis.parity
    out = []
    s = start_state
    for u in info:
        if u:
            out.append(par1[s])
            s = nxt1[s]
        else:
            out.append(par0[s])
            s = nxt0[s]
    return out, s
