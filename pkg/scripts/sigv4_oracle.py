#!/usr/bin/env python3
"""Independent AWS Signature Version 4 ground-truth calculator.

Transcribed directly from the AWS documentation's signing walkthrough, kept
deliberately separate from the brclake package so test vectors are checked
against a second implementation. Reads one request vector as JSON on stdin
and prints the Authorization header value.

Vector fields: method, path, query (list of [key, value]), headers (object),
payload_hash, access_key, secret_key, region, amz_date (YYYYMMDDTHHMMSSZ).
"""

import hashlib
import hmac
import json
import sys


def uri_encode(value, keep_slash):
    safe = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
    if keep_slash:
        safe += "/"
    out = ""
    for byte in value.encode("utf-8"):
        ch = chr(byte)
        if ch in safe:
            out += ch
        else:
            out += "%%%02X" % byte
    return out


def sign(key, msg):
    return hmac.new(key, msg.encode("utf-8"), hashlib.sha256).digest()


def main():
    vector = json.load(sys.stdin)
    method = vector["method"]
    path = vector["path"]
    query = vector.get("query", [])
    headers = vector["headers"]
    payload_hash = vector["payload_hash"]
    access_key = vector["access_key"]
    secret_key = vector["secret_key"]
    region = vector["region"]
    amz_date = vector["amz_date"]
    datestamp = amz_date[:8]
    service = "s3"

    canonical_uri = uri_encode(path, True)

    encoded_pairs = sorted(
        (uri_encode(str(k), False), uri_encode(str(v), False)) for k, v in query
    )
    canonical_querystring = "&".join(k + "=" + v for k, v in encoded_pairs)

    lowered = sorted((k.lower(), " ".join(str(v).split())) for k, v in headers.items())
    canonical_headers = ""
    for k, v in lowered:
        canonical_headers += k + ":" + v + "\n"
    signed_headers = ";".join(k for k, _ in lowered)

    canonical_request = (method + "\n" + canonical_uri + "\n" + canonical_querystring
                         + "\n" + canonical_headers + "\n" + signed_headers + "\n"
                         + payload_hash)

    algorithm = "AWS4-HMAC-SHA256"
    credential_scope = datestamp + "/" + region + "/" + service + "/" + "aws4_request"
    string_to_sign = (algorithm + "\n" + amz_date + "\n" + credential_scope + "\n"
                      + hashlib.sha256(canonical_request.encode("utf-8")).hexdigest())

    k_date = sign(("AWS4" + secret_key).encode("utf-8"), datestamp)
    k_region = sign(k_date, region)
    k_service = sign(k_region, service)
    k_signing = sign(k_service, "aws4_request")
    signature = hmac.new(k_signing, string_to_sign.encode("utf-8"), hashlib.sha256).hexdigest()

    authorization = (algorithm + " " + "Credential=" + access_key + "/" + credential_scope
                     + ", " + "SignedHeaders=" + signed_headers + ", " + "Signature=" + signature)
    print(authorization)


if __name__ == "__main__":
    main()
