"""Inventory Management: device CRUD plus the role/GPU filters used for selection."""
from __future__ import annotations

import json

from edgeledger.contracts.records import (
    ROLE_SENSOR,
    ROLE_SERVER,
    DeviceRecord,
    check_id,
    decode_json,
    device_key,
    encode,
)
from edgeledger.errors import DuplicateError, NotFoundError, ValidationError
from edgeledger.ledger import Contract, TxContext, query, transaction

DEVICE_PREFIX = "device:"


def read_device(ctx: TxContext, device_id: str) -> DeviceRecord:
    raw = ctx.get_state(device_key(check_id(device_id)))
    if raw is None:
        raise NotFoundError(f"device {device_id!r} not found")
    return DeviceRecord.from_dict(json.loads(raw))


def all_devices(ctx: TxContext) -> list[DeviceRecord]:
    return [DeviceRecord.from_dict(json.loads(v)) for _, v in ctx.get_range(DEVICE_PREFIX)]


def _listing(devices) -> str:
    return json.dumps([d.to_dict() for d in sorted(devices, key=lambda d: d.id)], separators=(",", ":"))


class InventoryContract(Contract):
    name = "inventory"

    @transaction("CreateDevice")
    def create_device(self, ctx: TxContext, payload: str) -> str:
        record = DeviceRecord.from_dict(decode_json(payload, "device"))
        key = device_key(record.id)
        if ctx.get_state(key) is not None:
            raise DuplicateError(f"device {record.id!r} already exists")
        ctx.put_state(key, encode(record.to_dict()))
        return record.id

    @query("ReadDevice")
    def read(self, ctx: TxContext, device_id: str) -> str:
        return encode(read_device(ctx, device_id).to_dict()).decode()

    @transaction("UpdateDevice")
    def update_device(self, ctx: TxContext, payload: str) -> str:
        record = DeviceRecord.from_dict(decode_json(payload, "device"))
        read_device(ctx, record.id)
        ctx.put_state(device_key(record.id), encode(record.to_dict()))
        return record.id

    @transaction("DeleteDevice")
    def delete_device(self, ctx: TxContext, device_id: str) -> str:
        read_device(ctx, device_id)
        ctx.del_state(device_key(device_id))
        return device_id

    @query("ListDevices")
    def list_devices(self, ctx: TxContext) -> str:
        return _listing(all_devices(ctx))

    @query("GetServerList")
    def server_list(self, ctx: TxContext) -> str:
        return _listing(d for d in all_devices(ctx) if d.active and d.role == ROLE_SERVER)

    @query("GetServerListGPU")
    def server_list_gpu(self, ctx: TxContext) -> str:
        return _listing(d for d in all_devices(ctx) if d.active and d.role == ROLE_SERVER and d.has_gpu)

    @query("GetSensorList")
    def sensor_list(self, ctx: TxContext) -> str:
        return _listing(d for d in all_devices(ctx) if d.active and d.role == ROLE_SENSOR)

    @query("GetProbeTargets")
    def probe_targets(self, ctx: TxContext, source_id: str) -> str:
        """Sensors an edge server must measure latency against; none for other roles."""
        source = read_device(ctx, source_id)
        if source.role != ROLE_SERVER or not source.active:
            return "[]"
        targets = [
            {"targetId": d.id, "address": d.address, "credentialRef": d.credential_ref}
            for d in sorted(all_devices(ctx), key=lambda d: d.id)
            if d.active and d.role == ROLE_SENSOR and d.id != source.id
        ]
        return json.dumps(targets, separators=(",", ":"))


def require_role(device: DeviceRecord, role: str) -> None:
    if device.role != role:
        raise ValidationError(f"device {device.id!r} has role {device.role!r}, expected {role!r}")
