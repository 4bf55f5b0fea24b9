config.set("1234567891234567","unwantedData", {
     "blacklisted_keys": {
        "ViewContent": {
            "cd": ["em"], "url": ["lat", "lng"]
        },
    },
    "sensitive_keys": {
        "PageView": {
            "cd": ["d3857b12b4cea..."], // SHA-256 hash
        }
    }
});
