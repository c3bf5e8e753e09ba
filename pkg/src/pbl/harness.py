"""Simulated provider network with TTL-based fault semantics.

Providers register a handler under a unique id; all traffic is
length-prefixed frames routed through :meth:`Network.send`. A fault
program injected on a provider shapes what its peers observe:

* ``silent`` — the request never answers; the caller gives up after the
  TTL elapses on the clock and sees a fault.
* ``delayed(d)`` — the answer arrives after ``d`` ms, which is a fault
  whenever ``d`` exceeds the TTL.
* ``corrupt-signature`` — frames the provider emits (responses and
  forwards alike) have their provider-signature bytes bit-flipped. This
  exceeds a crash-fault model and exists to drive tamper-evidence checks
  end to end.

With a :class:`VirtualClock` the whole harness is deterministic; a
:class:`SystemClock` drives the same code in real time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol

from . import wire
from .identity import Signature

DEFAULT_TTL_MS = 500

HEALTHY = "healthy"
SILENT = "silent"
DELAYED = "delayed"
CORRUPT_SIGNATURE = "corrupt-signature"


class ProviderFault(Exception):
    """A provider failed to answer within the TTL (or does not exist)."""

    def __init__(self, provider_id: str, reason: str) -> None:
        super().__init__(f"{provider_id}: {reason}")
        self.provider_id = provider_id
        self.reason = reason


@dataclass(frozen=True)
class FaultProgram:
    """Behaviour injected on one provider.

    ``window`` optionally scopes the program to a half-open virtual-time
    interval [start, end); outside it the provider acts healthy.
    """

    mode: str = HEALTHY
    delay_ms: int = 0
    window: tuple[int, int] | None = None

    def active(self, now_ms: int) -> bool:
        if self.mode == HEALTHY:
            return False
        if self.window is None:
            return True
        start, end = self.window
        return start <= now_ms < end


class Clock(Protocol):
    def now_ms(self) -> int: ...
    def advance(self, ms: int) -> None: ...


class VirtualClock:
    """Monotone virtual time advanced explicitly."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("the clock cannot go backwards")
        self._now += ms


class SystemClock:
    """Wall-clock time; ``advance`` sleeps."""

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def advance(self, ms: int) -> None:
        time.sleep(ms / 1000.0)


Handler = Callable[[str, wire.Message], wire.Message]


@dataclass
class _Endpoint:
    handler: Handler
    program: FaultProgram


def _flip_signature(sig: Signature) -> Signature:
    return replace(sig, value=bytes([sig.value[0] ^ 0x01]) + sig.value[1:])


def _corrupt(msg: wire.Message) -> wire.Message:
    """Bit-flip the provider-signature field a message carries, if any."""
    if isinstance(msg, wire.GenesisResponse):
        genesis = replace(msg.genesis, gba_signature=_flip_signature(msg.genesis.gba_signature))
        return wire.GenesisResponse(genesis)
    if isinstance(msg, wire.CompleteTx):
        ct = replace(msg.ct, executing_signature=_flip_signature(msg.ct.executing_signature))
        return wire.CompleteTx(ct)
    if isinstance(msg, wire.BlockCandidateMsg):
        cand = replace(msg.candidate,
                       ordering_signature=_flip_signature(msg.candidate.ordering_signature))
        return wire.BlockCandidateMsg(cand)
    if isinstance(msg, wire.ValidatedBlockMsg):
        return replace(msg, validation_signature=_flip_signature(msg.validation_signature))
    return msg


class Network:
    """Routes frames between registered providers, applying fault programs."""

    def __init__(self, clock: Clock | None = None, default_ttl_ms: int = DEFAULT_TTL_MS) -> None:
        self.clock: Clock = clock if clock is not None else VirtualClock()
        self.default_ttl_ms = default_ttl_ms
        self._endpoints: dict[str, _Endpoint] = {}

    def register(self, provider_id: str, handler: Handler) -> str:
        if provider_id in self._endpoints:
            raise ValueError(f"provider id {provider_id!r} already registered")
        self._endpoints[provider_id] = _Endpoint(handler, FaultProgram())
        return provider_id

    def deregister(self, provider_id: str) -> None:
        self._endpoints.pop(provider_id, None)

    def inject(self, provider_id: str, program: FaultProgram) -> None:
        try:
            self._endpoints[provider_id].program = program
        except KeyError:
            raise ValueError(f"unknown provider {provider_id!r}") from None

    def heal(self, provider_id: str) -> None:
        self.inject(provider_id, FaultProgram())

    def program_of(self, provider_id: str) -> FaultProgram | None:
        endpoint = self._endpoints.get(provider_id)
        return endpoint.program if endpoint else None

    def send(self, to: str, frame: bytes, ttl_ms: int | None = None, sender: str = "user") -> bytes:
        """Deliver a frame and return the response frame.

        Raises :class:`ProviderFault` when the destination is unknown,
        silent, or slower than the TTL. The clock advances by the TTL on
        a fault and by the provider's delay otherwise.
        """
        ttl = self.default_ttl_ms if ttl_ms is None else ttl_ms
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        endpoint = self._endpoints.get(to)
        now = self.clock.now_ms()
        if endpoint is None:
            self.clock.advance(ttl)
            raise ProviderFault(to, "unknown provider")
        program = endpoint.program
        if program.active(now):
            if program.mode == SILENT:
                self.clock.advance(ttl)
                raise ProviderFault(to, "no response within ttl")
            if program.mode == DELAYED and program.delay_ms > ttl:
                self.clock.advance(ttl)
                raise ProviderFault(to, f"response delayed {program.delay_ms} ms beyond ttl")
            if program.mode == DELAYED:
                self.clock.advance(program.delay_ms)

        msg = wire.decode_frame(frame)
        sender_endpoint = self._endpoints.get(sender)
        if sender_endpoint is not None and sender_endpoint.program.active(now) \
                and sender_endpoint.program.mode == CORRUPT_SIGNATURE:
            msg = _corrupt(msg)
        response = endpoint.handler(sender, msg)
        if endpoint.program.active(self.clock.now_ms()) and endpoint.program.mode == CORRUPT_SIGNATURE:
            response = _corrupt(response)
        return wire.encode_frame(response)

    def request(self, to: str, msg: wire.Message, ttl_ms: int | None = None,
                sender: str = "user") -> wire.Message:
        """Convenience wrapper framing a message and decoding the response."""
        return wire.decode_frame(self.send(to, wire.encode_frame(msg), ttl_ms, sender))
