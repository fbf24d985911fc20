import hashlib
import uuid

# Generate a random UUID
def unique_id() -> str:
   my_uuid = uuid.uuid4()
   return my_uuid.hex

# Stable id from its parts, identical across processes
def stable_id(*parts) -> str:
   joined = "\x1f".join(str(p) for p in parts)
   return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]

def sha256_bytes(data: bytes) -> str:
   return hashlib.sha256(data).hexdigest()
