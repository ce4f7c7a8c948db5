"""Deterministic simulated tools over an account/calendar/alarm/email world.

Every simulation step is a pure function of (arguments, state): the incoming
state is cloned, identifiers are derived from a counter inside the state,
and validation failures come back as exception-style responses such as
``{"exception": "The username does not exist"}`` rather than crashes.
"""

from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional

from .types import Scenario, ToolCall, ToolParameter, ToolSpec

_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s]+$")
_TIME_RE = re.compile(r"^\d{2}:\d{2}:\d{2}$")
_DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"

SPECIAL_TOOLS = ("AskUserForInformation", "FinishTask", "AbortTask")


@dataclass
class WorldState:
    """Mutable environment the side-effecting tools act on.

    ``preassigned_tokens`` and ``preassigned_codes`` let scenario fixtures
    pin the identifiers the simulator would otherwise derive, so recorded
    gold transcripts replay coherently.
    """

    users: dict = field(default_factory=dict)
    sessions: dict = field(default_factory=dict)
    logged_in: Optional[str] = None
    events: dict = field(default_factory=dict)
    alarms: dict = field(default_factory=dict)
    emails: list = field(default_factory=list)
    pending_codes: dict = field(default_factory=dict)
    preassigned_tokens: dict = field(default_factory=dict)
    preassigned_codes: dict = field(default_factory=dict)
    op_count: int = 0

    def clone(self) -> "WorldState":
        return copy.deepcopy(self)

    def session_user(self, token) -> Optional[str]:
        return self.sessions.get(str(token))


def _digest(state: WorldState, kind: str) -> str:
    return hashlib.sha256(f"{kind}:{state.op_count}".encode("utf-8")).hexdigest()


def _session_token(state: WorldState, username: str) -> str:
    if username in state.preassigned_tokens:
        return state.preassigned_tokens[username]
    h = _digest(state, "session")
    return f"{h[:8]}-{h[8:12]}-{h[12:16]}"


def _event_id(state: WorldState) -> str:
    h = _digest(state, "event")
    return f"{h[:8]}-{h[8:12]}"


def _alarm_id(state: WorldState) -> str:
    h = _digest(state, "alarm")
    return f"{h[:4]}-{h[4:8]}"


def _verification_code(state: WorldState, username: str) -> str:
    if username in state.preassigned_codes:
        return state.preassigned_codes[username]
    return str(int(_digest(state, "code")[:8], 16) % 1000000).zfill(6)


def _require_session(args: dict, state: WorldState) -> Optional[dict]:
    username = state.session_user(args.get("session_token"))
    if username is None:
        return {"exception": "Invalid session token"}
    return None


def _register_user(args: dict, state: WorldState) -> dict:
    if state.logged_in is not None:
        return {"exception": f"Only one user can be logged in at a time. Current user is {state.logged_in}."}
    username = str(args["username"])
    if username in state.users:
        return {"exception": "The username already exists"}
    email = str(args["email"])
    if not _EMAIL_RE.match(email):
        return {"exception": "The email format is invalid"}
    state.users[username] = {
        "password": str(args["password"]),
        "email": email,
        "name": str(args.get("name", "")),
        "phone": str(args.get("phone", "")),
    }
    token = _session_token(state, username)
    state.sessions[token] = username
    state.logged_in = username
    return {"session_token": token}


def _user_login(args: dict, state: WorldState) -> dict:
    if state.logged_in is not None:
        return {"exception": f"Only one user can be logged in at a time. Current user is {state.logged_in}."}
    username = str(args["username"])
    if username not in state.users:
        return {"exception": "The username does not exist"}
    if state.users[username]["password"] != str(args["password"]):
        return {"exception": "The password is incorrect"}
    token = _session_token(state, username)
    state.sessions[token] = username
    state.logged_in = username
    return {"session_token": token}


def _send_verification_code(args: dict, state: WorldState) -> dict:
    username = str(args["username"])
    if username not in state.users:
        return {"exception": "The username does not exist"}
    if state.users[username]["email"] != str(args["email"]):
        return {"exception": "The email is incorrect."}
    state.pending_codes[username] = _verification_code(state, username)
    return {"status": "success"}


def _reset_password(args: dict, state: WorldState) -> dict:
    username = str(args["username"])
    if username not in state.users:
        return {"exception": "The username does not exist"}
    expected = state.pending_codes.get(username)
    if expected is None or expected != str(args["verification_code"]):
        return {"exception": "The verification code is incorrect"}
    state.users[username]["password"] = str(args["new_password"])
    del state.pending_codes[username]
    return {"status": "success"}


def _parse_datetime(text) -> Optional[datetime]:
    try:
        return datetime.strptime(str(text), _DATETIME_FORMAT)
    except ValueError:
        return None


def _create_event(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    start = _parse_datetime(args["start_time"])
    end = _parse_datetime(args["end_time"])
    if start is None or end is None:
        return {"exception": "Times must be formatted as %Y-%m-%d %H:%M:%S"}
    if end <= start:
        return {"exception": "The event end time must be after the start time"}
    event_id = _event_id(state)
    state.events[event_id] = {
        "event_id": event_id,
        "name": str(args["name"]),
        "event_type": str(args.get("event_type", "event")),
        "start_time": str(args["start_time"]),
        "end_time": str(args["end_time"]),
        "location": str(args.get("location", "")),
        "description": str(args.get("description", "")),
        "attendees": list(args.get("attendees", [])),
    }
    return {"event_id": event_id}


def _modify_event(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    event_id = str(args["event_id"])
    if event_id not in state.events:
        return {"exception": "The event does not exist"}
    event = state.events[event_id]
    for key in ("name", "start_time", "end_time", "location", "description", "attendees"):
        new_key = f"new_{key}"
        if new_key in args:
            event[key] = list(args[new_key]) if key == "attendees" else str(args[new_key])
    return {"status": "success"}


def _query_calendar(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    start = _parse_datetime(args["start_time"])
    end = _parse_datetime(args["end_time"])
    if start is None or end is None:
        return {"exception": "Times must be formatted as %Y-%m-%d %H:%M:%S"}
    found = []
    for event_id in sorted(state.events):
        event = state.events[event_id]
        ev_start = _parse_datetime(event["start_time"])
        ev_end = _parse_datetime(event["end_time"])
        if ev_start is None or ev_end is None:
            continue
        if ev_start <= end and ev_end >= start:
            found.append(dict(event))
    return {"events": found}


def _query_user(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    username = str(args.get("username") or state.session_user(args.get("session_token")))
    if username not in state.users:
        return {"exception": "The username does not exist"}
    user = state.users[username]
    return {"username": username, "email": user["email"], "phone": user["phone"], "name": user["name"]}


def _send_email(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    to = args["to"]
    recipients = [str(t) for t in (to if isinstance(to, (list, tuple)) else [to])]
    state.emails.append({"to": recipients, "subject": str(args["subject"]), "body": str(args["body"])})
    return {"status": "success"}


def _add_alarm(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    if not _TIME_RE.match(str(args["time"])):
        return {"exception": "Time must be formatted as %H:%M:%S"}
    alarm_id = _alarm_id(state)
    state.alarms[alarm_id] = {"alarm_id": alarm_id, "time": str(args["time"])}
    return {"alarm_id": alarm_id}


def _get_account_information(args: dict, state: WorldState) -> dict:
    denied = _require_session(args, state)
    if denied:
        return denied
    username = state.session_user(args.get("session_token"))
    user = state.users.get(username, {})
    return {
        "username": username,
        "email": user.get("email", ""),
        "phone": user.get("phone", ""),
        "name": user.get("name", ""),
    }


def _ask_user(args: dict, state: WorldState) -> dict:
    return {"status": "delivered"}


def _finish_task(args: dict, state: WorldState) -> dict:
    return {"status": "finished"}


def _abort_task(args: dict, state: WorldState) -> dict:
    return {"status": "aborted"}


class ToolRegistry:
    """Immutable-after-startup collection of tool specs."""

    def __init__(self, specs: list[ToolSpec]):
        self.specs = {spec.name: spec for spec in specs}

    def __contains__(self, name: str) -> bool:
        return name in self.specs

    def is_side_effecting(self, name: str) -> bool:
        spec = self.specs.get(name)
        return bool(spec and spec.side_effecting)

    def simulate(self, call: ToolCall, state: WorldState) -> tuple[dict, WorldState]:
        """Run one call, returning (response, new state) without touching the input state."""
        new_state = state.clone()
        new_state.op_count += 1
        spec = self.specs.get(call.tool_name)
        if spec is None or spec.simulate is None:
            return {"exception": f"Unknown tool: {call.tool_name}"}, new_state
        missing = [p for p in spec.required_parameters() if p not in call.arguments]
        if missing:
            return {"exception": f"Missing required parameter: {missing[0]}"}, new_state
        response = spec.simulate(dict(call.arguments), new_state)
        return response, new_state


def build_default_registry() -> ToolRegistry:
    """The account/calendar/alarm/email tool suite plus the special
    user-interaction tools named in the agent system prompt."""
    p = ToolParameter
    specs = [
        ToolSpec(
            name="RegisterUser",
            parameters=[
                p("username", required=True),
                p("password", required=True),
                p("email", required=True),
                p("name"),
                p("phone"),
            ],
            side_effecting=True,
            simulate=_register_user,
        ),
        ToolSpec(
            name="UserLogin",
            parameters=[p("username", required=True), p("password", required=True)],
            side_effecting=True,
            simulate=_user_login,
        ),
        ToolSpec(
            name="SendVerificationCode",
            parameters=[p("username", required=True), p("email", required=True)],
            side_effecting=True,
            simulate=_send_verification_code,
        ),
        ToolSpec(
            name="ResetPassword",
            parameters=[
                p("username", required=True),
                p("verification_code", required=True),
                p("new_password", required=True),
            ],
            side_effecting=True,
            simulate=_reset_password,
        ),
        ToolSpec(
            name="CreateEvent",
            parameters=[
                p("name", required=True),
                p("event_type"),
                p("start_time", required=True),
                p("end_time", required=True),
                p("location"),
                p("description"),
                p("attendees", type="list"),
                p("session_token", required=True),
            ],
            side_effecting=True,
            simulate=_create_event,
        ),
        ToolSpec(
            name="ModifyEvent",
            parameters=[
                p("event_id", required=True),
                p("session_token", required=True),
                p("new_name"),
                p("new_start_time"),
                p("new_end_time"),
                p("new_location"),
                p("new_description"),
                p("new_attendees", type="list"),
            ],
            side_effecting=True,
            simulate=_modify_event,
        ),
        ToolSpec(
            name="QueryCalendar",
            parameters=[
                p("session_token", required=True),
                p("start_time", required=True),
                p("end_time", required=True),
            ],
            side_effecting=False,
            simulate=_query_calendar,
        ),
        ToolSpec(
            name="QueryUser",
            parameters=[p("session_token", required=True), p("username")],
            side_effecting=False,
            simulate=_query_user,
        ),
        ToolSpec(
            name="SendEmail",
            parameters=[
                p("session_token", required=True),
                p("to", type="list", required=True),
                p("subject", required=True),
                p("body", required=True),
            ],
            side_effecting=True,
            simulate=_send_email,
        ),
        ToolSpec(
            name="AddAlarm",
            parameters=[p("session_token", required=True), p("time", required=True)],
            side_effecting=True,
            simulate=_add_alarm,
        ),
        ToolSpec(
            name="GetAccountInformation",
            parameters=[p("session_token", required=True)],
            side_effecting=False,
            simulate=_get_account_information,
        ),
        ToolSpec(name="AskUserForInformation", parameters=[p("question")], simulate=_ask_user),
        ToolSpec(name="FinishTask", simulate=_finish_task),
        ToolSpec(name="AbortTask", simulate=_abort_task),
    ]
    return ToolRegistry(specs)


def build_world(scenario: Scenario) -> WorldState:
    """Seed a world state from a scenario's metadata and world block."""
    state = WorldState()
    world = scenario.world
    for user in world.get("users", []):
        record = dict(user)
        username = record.pop("username")
        record.setdefault("password", "")
        record.setdefault("email", "")
        record.setdefault("name", "")
        record.setdefault("phone", "")
        state.users[username] = record
    for event in world.get("events", []):
        record = dict(event)
        record.setdefault("attendees", [])
        record.setdefault("description", "")
        record.setdefault("location", "")
        state.events[record["event_id"]] = record
    state.preassigned_tokens = dict(world.get("session_tokens", {}))
    state.preassigned_codes = dict(world.get("verification_codes", {}))
    token = scenario.metadata.get("session_token")
    username = scenario.metadata.get("username")
    if token and username:
        state.sessions[str(token)] = str(username)
        state.logged_in = str(username)
    return state
